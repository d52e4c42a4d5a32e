"""Intent-driven computing: programs produce intents, a governed runtime decides,
records and only then realizes them."""

__version__ = "0.1.0"
