"""Navigation guidance synthesis, self-consistency selection, NPO and NVLA fusion at toy scale."""

__version__ = "0.1.0"
