"""Exception hierarchy shared by all stages."""


class BotCollabError(Exception):
    """Base class for every error raised by this package."""


# ingest
class NotARepository(BotCollabError):
    pass


class EmptyRepository(BotCollabError):
    pass


class CorruptObject(BotCollabError):
    def __init__(self, commit_id, detail=""):
        super().__init__(f"unreadable object at commit {commit_id}: {detail}".rstrip(": "))
        self.commit_id = commit_id


class UnidentifiableAuthor(BotCollabError):
    pass


# provenance
class StateDesync(BotCollabError):
    """A hunk addresses lines the ownership state does not have."""

    def __init__(self, commit_id, path, detail):
        super().__init__(f"state desync at {commit_id} in {path!r}: {detail}")
        self.commit_id = commit_id
        self.path = path


class CacheCorrupt(BotCollabError):
    pass


# networks
class EmptyWindow(BotCollabError):
    pass


# actions
class MalformedYaml(BotCollabError):
    pass


# gh-client
class RateLimited(BotCollabError):
    pass


class NotFound(BotCollabError):
    pass


class AuthFailure(BotCollabError):
    pass


# study
class InsufficientHistory(BotCollabError):
    pass


class NoFeasiblePlacebo(BotCollabError):
    pass


class StratumEmpty(BotCollabError):
    pass


# stats
class AllZeroDifferences(BotCollabError):
    pass


class TooFewPlacebos(BotCollabError):
    pass


class ConfigError(BotCollabError):
    pass
