"""Commonsense knowledge bases as callable tools for empathetic dialogue."""

from .dialogue import (Conversation, DirectResponse, Message, Role, ToolCallPayload, ToolInvocation,
                       parse_model_output, render_prompt, validate)
from .tools import Registry, ToolSpec, cicero_spec, comet_spec

__version__ = "0.1.0"
