"""Serverless function runtime that traces guest programs and replays the
traces in a lightweight executor, falling back to an interpreter when the
trace does not cover a request."""

from .events import Request, Response
from .invoker import Invoker, InvokerConfig, Mode

__all__ = ["Invoker", "InvokerConfig", "Mode", "Request", "Response"]
__version__ = "0.1.0"
