"""Feature engine and experiment harness for mobile-money adoption modeling from CDR logs."""

__version__ = "0.1.0"
