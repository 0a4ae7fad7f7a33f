"""Scripted-scenario builder for offline pipeline runs.

Given documents, their scripted step-1 proposition lists, and scripted
step-2 responses per sublist, this produces the (template, fingerprint) ->
response mapping the mock chat backend replays. Bindings are constructed
with the same expressions the pipeline uses, so a scenario stays valid as
long as the scripted texts are already trimmed and unique per document.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from convqa_synth.corpus import (
    DocumentSet,
    Proposition,
    PropositionSet,
    chunk_units,
    global_unit_order,
)
from convqa_synth.llm_gateway import fingerprint


@dataclass
class SublistScript:
    """One sublist's scripted step-2 responses.

    pairs:       (user_de, system) per pair (greeting first, closing last)
    user_cos:    contextualized question per pair, positionally aligned
    annotations: raw annotation dict per pair; defaults to accepted with
                 propositions_used copied from `used` when given
    """

    pairs: list[tuple[str, str]]
    user_cos: list[str]
    annotations: list[dict] = field(default_factory=list)


def key(template: str, bindings: dict) -> tuple[str, str]:
    return (template, fingerprint(template, bindings))


def scripted_repo(step1: dict[str, list[str]]) -> PropositionSet:
    props = []
    for doc_id, texts in step1.items():
        for ordinal, text in enumerate(texts):
            props.append(Proposition(id=f"{doc_id}:p{ordinal}", doc_id=doc_id,
                                     ordinal=ordinal, text=text))
    return PropositionSet(props)


def build_responses(documents: DocumentSet, step1: dict[str, list[str]],
                    scripts: dict[int, SublistScript], n: int) -> dict[tuple[str, str], str]:
    responses: dict[tuple[str, str], str] = {}
    for doc in documents:
        responses[key("step1_propositions", {"text": doc.text})] = json.dumps(
            step1.get(doc.id, []), ensure_ascii=False)
    repo = scripted_repo(step1)
    sublists = chunk_units([p.id for p in global_unit_order(repo)], n)
    for sublist in sublists:
        script = scripts[sublist.index]
        props_json = json.dumps([repo[u].text for u in sublist.unit_ids], ensure_ascii=False)
        dialog_value = {
            str(i): {"<user>": user_de, "<system>": system}
            for i, (user_de, system) in enumerate(script.pairs)
        }
        dialog_json = json.dumps(dialog_value, ensure_ascii=False)
        responses[key("p2_1_dialog", {"propositions": props_json})] = dialog_json
        responses[key("p2_2_contextualize", {"dialog": dialog_json})] = json.dumps(
            {str(i): {"<contextualized user>": co,
                      "<system>": script.pairs[i][1]}
             for i, co in enumerate(script.user_cos)},
            ensure_ascii=False)
        annotations = script.annotations or [
            {"propositions_used": [], "explain_evaluation": "ok", "evaluation": "accepted"}
            for _ in script.pairs
        ]
        responses[key("p2_3_ground",
                      {"propositions": props_json, "pairs": dialog_json})] = json.dumps(
            {str(i): annotation for i, annotation in enumerate(annotations)},
            ensure_ascii=False)
    return responses
