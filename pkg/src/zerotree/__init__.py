"""End-to-end encrypted B-Tree indexes over an untrusted blob server."""

__version__ = "0.1.0"
