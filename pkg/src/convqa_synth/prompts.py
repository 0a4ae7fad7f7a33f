"""The six shipped prompt templates.

Template bodies are frozen: downstream fixtures are keyed by a fingerprint
of (template name, bindings), and regression tests pin each body's hash.
Placeholders use ``{name}`` syntax; literal braces (the embedded JSON format
examples) are left untouched by the renderer because they never form an
``{identifier}`` pattern.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str


STEP1_PROPOSITIONS = PromptTemplate(
    name="step1_propositions",
    body="""\
Read the document you will be given and look for questions and answers in it. \
Return propositions if the document includes information that could actually \
answer user questions. If the document only has links or vague information \
that can't answer questions, do not return propositions. Also, do not return \
propositions if the document only has questions. If the document does have \
questions and answers, break them down into simple and clear propositions \
that make sense on their own. Recognize the language of the document given \
below and provide the propositions in the original language as the given \
Document.

If you do not create propositions the reply must be an empty list such as [] \
and nothing else.

Here is a document:
<document>
{text}
</document>

To generate propositions you need to:

1. Split compound sentence into simple English sentences. Maintain the \
original phrasing from the input whenever possible.

2. For any named entity that is accompanied by additional descriptive \
information, separate this information into its own distinct proposition.

3. Decontextualize the proposition by adding necessary modifier to nouns or \
entire sentences and replacing pronouns (e.g., "it", "he", "she", "they", \
"this", "that") with the full name of the entities they refer to.

4. Present the results as a list of strings, formatted in JSON. Provide only \
the JSON and nothing else.
""",
)

P2_1_DIALOG = PromptTemplate(
    name="p2_1_dialog",
    body="""\
Your task is to read the given propositions and generate a dialog between a \
user and a system, where the user asks certain questions and the system tries \
to provide answers.

Follow these instructions:

1. Your response should be a JSON of the following format:

{
  "0" : {
    "<user>": ,
    "<system>":,
  },
  "1" : {
    "<user>": ,
    "<system>":,
  },
  ...
}

2. The dialog must start with the user greeting the system and the system \
replying politely.

3. The dialog must end with user thanking the system and the system replying \
politely.

4. In each dialog turn, the user asks a question based on a given \
proposition. The user question must be a self-contained, standalone question \
without the need to refer to previous dialog context.

5. A user may also ask complex questions, for which the answer can be two or \
more propositions.

6. In each dialog exchange the system answers the user question based on the \
propositions.

7. Make sure that the user questions referring to the same propositions are \
in adjacent turns.

8. Each system's answer must be a full sentence.

<propositions>
{propositions}
</propositions>
""",
)

P2_2_CONTEXTUALIZE = PromptTemplate(
    name="p2_2_contextualize",
    body="""\
Your task is to read the given dialog. The dialog you will be given has a \
JSON format. The key <user> refers to user utterances, while the key <system> \
refers to the system utterances. Make the user utterances dependent on \
previous dialog turns taking into account the dialog context and using \
pronouns to replace already mentioned information only if such information is \
already mentioned in the previous dialog turns. Only return a JSON of the \
following format:

{
  "0" : {
    "<contextualized user>": ,
    "<system>":
  },
  "1" : {
    "<contextualized user>": ,
    "<system>":
  },
  ...
}

Here is the dialog:
<dialog>
{dialog}
</dialog>
""",
)

P2_3_GROUND = PromptTemplate(
    name="p2_3_ground",
    body="""\
I will give you a list of propositions and a text in JSON format of question \
and answer pairs generated from these propositions. I need you to act as a \
human annotator and evaluate the question and answer pairs provided following \
these instructions:

1. Provide a separate review and evaluation for each question and answer.

2. First check if the questions provided are correctly generated from the \
propositions provided.

3. The answer to each question should be reflecting the information provided \
in the propositions.

4. Note which propositions are used in each answer.

5. If a question and answer is generated from the provided propositions \
after your review, mark it as "accepted". If not, mark it as "not_accepted".

6. The first and last pairs should always be accepted.

7. Return only a dictionary in JSON format and nothing else. The key of each \
dictionary should be the same with each question answer pair given. Follow \
the example:

{
  "0": {
    "propositions_used": ,
    "explain_evaluation": ,
    "evaluation": ,
  },
}

Here are the propositions and the question-answer pairs:

<propositions>
{propositions}
</propositions>

<question and answer pairs>
{pairs}
</question and answer pairs>
""",
)

RESPONSE_GEN = PromptTemplate(
    name="response_gen",
    body="""\
Your job is to answer user questions given a set of propositions in a list \
format. There may be irrelevant propositions included.

You only need to provided the answer. If the question cannot be answered \
using the provided propositions, generate the token <cannot_answer> only.

Here are the propositions: {propositions}

Here is the user question: {question}
""",
)

REWRITER = PromptTemplate(
    name="rewriter",
    body="""\
You rewrite conversational user questions so they are self-contained. You \
will be given a dialog history followed by the latest user question. If the \
question already makes sense on its own, reply with the token no_rewrite and \
nothing else. Otherwise reply with the token rewrite followed by a single \
space and the rewritten question, replacing pronouns and references with the \
entities they refer to in the history. Do not answer the question.

Here is the dialog history:
<history>
{history}
</history>

Here is the user question:
<question>
{question}
</question>
""",
)

TEMPLATES: dict[str, PromptTemplate] = {
    t.name: t
    for t in (
        STEP1_PROPOSITIONS,
        P2_1_DIALOG,
        P2_2_CONTEXTUALIZE,
        P2_3_GROUND,
        RESPONSE_GEN,
        REWRITER,
    )
}
