from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from convqa_synth.corpus import Proposition, PropositionSet
from convqa_synth.dialog_synth import Dialog, DialogPair


@pytest.fixture
def board_appeal_dialog() -> Dialog:
    """Four-turn dialog where turns 1-3 refer back to 'a Board Appeal'."""
    pairs = (
        DialogPair(
            user_co="How can I submit a Decision Review Request for a Board Appeal?",
            user_de="How can I submit a Decision Review Request for a Board Appeal?",
            system=("To submit the Decision Review Request: Board Appeal VA Form "
                    "10182, you can apply by mail, in person, or by fax."),
            grounding=("docA:p0",),
        ),
        DialogPair(
            user_co="What are the steps to apply for it by mail?",
            user_de="What are the steps to apply for a Board Appeal by mail?",
            system=("To apply for a Board Appeal by mail, you need to send the "
                    "completed VA Form 10182 to the address: Board of Veterans "
                    "Appeals, PO Box 27063, Washington, D.C. 20038."),
            grounding=("docA:p1",),
        ),
        DialogPair(
            user_co="How can I apply for it in person?",
            user_de="How can I apply for a Board Appeal in person?",
            system=("To apply for a Board Appeal in person, you need to bring your "
                    "completed VA Form 10182 to a regional benefit office."),
            grounding=("docA:p2",),
        ),
        DialogPair(
            user_co="Can I apply for it by fax?",
            user_de="Can I apply for a Board Appeal by fax?",
            system=("Yes, to apply for a Board Appeal by fax, you need to fax your "
                    "completed VA Form 10182 to 844-678-8979."),
            grounding=("docA:p3",),
        ),
    )
    return Dialog(id="dlg-00000", sublist_index=0, doc_ids=("docA",), pairs=pairs)


@pytest.fixture
def board_appeal_repo() -> PropositionSet:
    texts = [
        "You can submit a Decision Review Request for a Board Appeal by mail, in person, or by fax.",
        "To apply for a Board Appeal by mail, send the completed VA Form 10182 to the Board of Veterans Appeals.",
        "To apply for a Board Appeal in person, bring the completed VA Form 10182 to a regional benefit office.",
        "To apply for a Board Appeal by fax, fax the completed VA Form 10182 to 844-678-8979.",
    ]
    return PropositionSet(
        Proposition(id=f"docA:p{i}", doc_id="docA", ordinal=i, text=text)
        for i, text in enumerate(texts)
    )


def make_dialog(dialog_id: str, sublist_index: int, specs: list[tuple[str, str, str, tuple[str, ...]]],
                doc_of=lambda prop_id: prop_id.split(":", 1)[0]) -> Dialog:
    """Compact dialog builder: specs are (user_co, user_de, system, grounding)."""
    pairs = tuple(DialogPair(user_co=co, user_de=de, system=system, grounding=grounding)
                  for co, de, system, grounding in specs)
    doc_ids = tuple(sorted({doc_of(g) for p in pairs for g in p.grounding}))
    return Dialog(id=dialog_id, sublist_index=sublist_index, doc_ids=doc_ids, pairs=pairs)
