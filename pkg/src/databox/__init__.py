"""Personal data platform: isolated stores, consent-compiled access
policies, on-box app execution, and an accountable export boundary."""

from .platform import Platform

__all__ = ["Platform"]
__version__ = "0.1.0"
