"""Judge prompt templates.

These are editable reconstructions: placeholders use ``string.Template``
syntax and are filled by :func:`ektc.dialogue._substitute`, which rejects
unknown names.
"""

TASK_DEFINITION = (
    "Empathetic dialogue: the assistant must understand the speaker's emotions "
    "and intentions from the conversation and reply appropriately."
)

ANNOTATOR = """You are annotating an empathetic dialogue dataset.

Task definition:
$task

Annotation task:
Decide whether, at this point of the conversation, the assistant should call the tool below before replying. Call the tool only when the user's utterance carries notable emotional intensity or an implicit intention that commonsense knowledge would help to understand. Greetings and small talk do not need the tool.

Tool definition:
$tool_name: $tool_description

Conversation context:
$context

Emotion of the user: $emotion

Golden response of the assistant:
$golden

Should the tool be called for this turn? Answer "yes" or "no" first, then give a short reason."""

REFLECTOR = """You are checking tool results for an empathetic dialogue dataset.

Task definition:
$task

Relevance judgment task:
Judge whether the tool result is highly relevant to the golden response. Consider three aspects:
- causal consistency: the result explains the cause behind what the response addresses;
- intent consistency: the result matches the intention the response responds to;
- emotional consistency: the result matches the emotion expressed in the response.

Tool definition:
$tool_name: $tool_description

Tool result:
$observation

Golden response:
$golden

Answer "relevant" or "irrelevant" first. Then rate each aspect on its own line as "causal: yes/no", "intent: yes/no", "emotional: yes/no"."""

ASPECT_DEFINITIONS = {
    "empathy": "Judge empathy: does the reply show that the assistant grasped how the user feels and what they want, and does it respond to that fittingly?",
    "consistency": "Judge consistency: does the reply stay on topic and say what it means clearly and briefly?",
    "fluency": "Judge fluency: does the reply sound like something a person would naturally say, without awkward phrasing?",
}

AB_JUDGE = """You are an impartial judge of empathetic dialogue responses.

$definition

Conversation context:
$context

[Response A]
$response_a
[End of Response A]

[Response B]
$response_b
[End of Response B]

Considering only $aspect, which response is better? Output your verdict strictly as "[[A]]" or "[[B]]"."""
