"""Mine git histories into co-editing and contribution networks and test
how Code Review bot adoption relates to their structure."""

__version__ = "0.1.0"
