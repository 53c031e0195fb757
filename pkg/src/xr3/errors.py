"""Shared exception types."""


class ConfigError(Exception):
    """A model, mapping, playlist or session configuration file is invalid."""


class ProtocolError(Exception):
    """A wire frame could not be decoded; the message names the byte offset."""
