#!/usr/bin/env python3
"""Author the bundled offline fixture.

Writes docs.jsonl (six demo documents across three domains), responses.jsonl
(scripted chat completions for the whole pipeline at n=6, including two
response-generation entries for the `respond` command), and config.toml into
src/convqa_synth/fixtures/. Run from the repository root after any change to
prompt templates, binding construction, or the demo scenario:

    python3 tools/make_fixture.py
"""
from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "tests"))  # reuse the scenario builder

from pipeline_fixtures import SublistScript, build_responses  # noqa: E402

from convqa_synth.config import load_config  # noqa: E402
from convqa_synth.corpus import Document, DocumentSet, save_documents  # noqa: E402
from convqa_synth.llm_gateway import fingerprint  # noqa: E402

FIXTURE_DIR = REPO_ROOT / "src" / "convqa_synth" / "fixtures"

DOCS = DocumentSet([
    Document(
        id="dmv-hazmat", domain="dmv",
        text=("To get a HazMat endorsement on a CDL you must pass a federal "
              "background check. If the checks are not completed before the "
              "endorsement expires, the DMV will provide a CDL with the HazMat "
              "endorsement that is valid for 90 days. The DMV will mail you a "
              "notification of approval with instructions.")),
    Document(
        id="dmv-renewal", domain="dmv",
        text=("You can renew a CDL online, by mail, or at a DMV office. A renewal "
              "submitted online is processed within two weeks. Bring proof of "
              "identity when renewing at an office.")),
    Document(
        id="misc-hours", domain="misc",
        text=("Our offices are open Monday through Friday from 8:00 a.m. to 9:00 "
              "p.m. Eastern Time. Phone support is closed on federal holidays. "
              "Walk-in service ends one hour before closing.")),
    Document(
        id="support-contact", domain="misc",
        text="Contact us. See the links below for more information."),
    Document(
        id="va-board-appeal", domain="va",
        text=("To submit a Decision Review Request for a Board Appeal, fill out VA "
              "Form 10182. You can apply by mail, in person, or by fax. Mail the "
              "completed form to the Board of Veterans Appeals. You can also fax "
              "your completed form to 844-678-8979. You have one year from the "
              "date on your decision to request a Board Appeal.")),
    Document(
        id="va-form-copy", domain="va",
        text=("You can ask a regional benefit office for a copy of VA Form 10182. "
              "You can also call the VA toll-free hotline at 800-827-1000 to "
              "request the form. The hotline operates Monday through Friday.")),
])

STEP1 = {
    "dmv-hazmat": [
        "A HazMat endorsement on a CDL requires a federal background check.",
        "A renewal CDL with a HazMat endorsement is valid for 90 days when checks are pending.",
        "The DMV mails a notification of HazMat approval.",
        "The HazMat approval notification includes instructions to visit a DMV office.",
    ],
    "dmv-renewal": [
        "A CDL can be renewed online, by mail, or at a DMV office.",
        "An online CDL renewal is processed within two weeks.",
        "Proof of identity is required when renewing a CDL at a DMV office.",
    ],
    "misc-hours": [
        "Offices are open Monday through Friday from 8:00 a.m. to 9:00 p.m. Eastern Time.",
        "Phone support is closed on federal holidays.",
        "Walk-in service ends one hour before closing.",
    ],
    "support-contact": [],
    "va-board-appeal": [
        "A Board Appeal is requested by submitting VA Form 10182.",
        "A Board Appeal application can be made by mail, in person, or by fax.",
        "The completed VA Form 10182 is mailed to the Board of Veterans Appeals.",
        "A completed VA Form 10182 can be faxed to 844-678-8979.",
        "A Board Appeal must be requested within one year of the decision date.",
    ],
    "va-form-copy": [
        "A copy of VA Form 10182 is available from a regional benefit office.",
        "VA Form 10182 can be requested by calling the VA hotline at 800-827-1000.",
        "The VA hotline operates Monday through Friday.",
    ],
}

# Global unit order at n=6 (sorted by doc id, then ordinal):
#   sublist 0: dmv-hazmat p0-p3, dmv-renewal p0-p1
#   sublist 1: dmv-renewal p2, misc-hours p0-p2, va-board-appeal p0-p1
#   sublist 2: va-board-appeal p2-p4, va-form-copy p0-p2
SCRIPTS = {
    0: SublistScript(
        pairs=[
            ("Hello!", "Hi! How can I help you today?"),
            ("What does a HazMat endorsement on a CDL require?",
             "A HazMat endorsement on a CDL requires a federal background check."),
            ("How long is a renewal CDL with a HazMat endorsement valid while checks are pending?",
             "While the checks are pending, a renewal CDL with a HazMat endorsement is valid for 90 days."),
            ("How does the DMV notify HazMat approval and what does the notification include?",
             "The DMV mails a notification of HazMat approval, and it includes instructions to visit a DMV office."),
            ("How can a CDL be renewed?",
             "A CDL can be renewed online, by mail, or at a DMV office."),
            ("Thanks, that covers it!", "You are welcome!"),
        ],
        user_cos=[
            "Hello!",
            "What does a HazMat endorsement on a CDL require?",
            "How long is a renewal CDL with it valid while checks are pending?",
            "How does the DMV notify its approval and what does the notification include?",
            "How can a CDL be renewed?",
            "Thanks, that covers it!",
        ],
        annotations=[
            {"propositions_used": [], "explain_evaluation": "greeting",
             "evaluation": "accepted"},
            {"propositions_used": [
                "A HazMat endorsement on a CDL requires a federal background check."],
             "explain_evaluation": "directly grounded", "evaluation": "accepted"},
            {"propositions_used": [
                "A renewal CDL with a HazMat endorsement is valid for 90 days when checks are pending."],
             "explain_evaluation": "directly grounded", "evaluation": "accepted"},
            {"propositions_used": [
                "The DMV mails a notification of HazMat approval.",
                "The HazMat approval notification includes instructions to visit a DMV office."],
             "explain_evaluation": "two propositions", "evaluation": "accepted"},
            {"propositions_used": [
                "A CDL can be renewed online, by mail, or at a DMV office."],
             "explain_evaluation": "directly grounded", "evaluation": "accepted"},
            {"propositions_used": [], "explain_evaluation": "closing",
             "evaluation": "accepted"},
        ],
    ),
    1: SublistScript(
        pairs=[
            ("Hi there!", "Hello! Ask away."),
            ("When are your offices open?",
             "Offices are open Monday through Friday from 8:00 a.m. to 9:00 p.m. Eastern Time."),
            ("Is phone support available on federal holidays?",
             "No, phone support is closed on federal holidays."),
            ("Do office visits require an appointment?",
             "Walk-in service is available, and it ends one hour before closing."),
            ("Which form starts a Board Appeal?",
             "A Board Appeal is requested by submitting VA Form 10182."),
            ("Thank you so much!", "Happy to help!"),
        ],
        user_cos=[
            "Hi there!",
            "When are your offices open?",
            "Is phone support available on federal holidays?",
            "Do office visits require an appointment?",
            "Which form starts a Board Appeal?",
            "Thank you so much!",
        ],
        annotations=[
            {"propositions_used": [], "explain_evaluation": "greeting",
             "evaluation": "accepted"},
            {"propositions_used": [
                "Offices are open Monday through Friday from 8:00 a.m. to 9:00 p.m. Eastern Time."],
             "explain_evaluation": "directly grounded", "evaluation": "accepted"},
            {"propositions_used": [
                "Phone support is closed on federal holidays."],
             "explain_evaluation": "directly grounded", "evaluation": "accepted"},
            {"propositions_used": [
                "Walk-in service ends one hour before closing."],
             "explain_evaluation": "question about appointments is not grounded",
             "evaluation": "not_accepted"},
            {"propositions_used": [
                "A Board Appeal is requested by submitting VA Form 10182."],
             "explain_evaluation": "directly grounded", "evaluation": "accepted"},
            {"propositions_used": [], "explain_evaluation": "closing",
             "evaluation": "accepted"},
        ],
    ),
    2: SublistScript(
        pairs=[
            ("Good morning!", "Good morning! What would you like to know?"),
            ("Where do I mail the completed VA Form 10182 for a Board Appeal?",
             "The completed VA Form 10182 is mailed to the Board of Veterans Appeals."),
            ("What is the time limit to request a Board Appeal?",
             "A Board Appeal must be requested within one year of the decision date."),
            ("How can I get a copy of VA Form 10182?",
             "A copy of VA Form 10182 is available from a regional benefit office, "
             "or by calling the VA hotline at 800-827-1000."),
            ("Thanks, goodbye!", "Goodbye!"),
        ],
        user_cos=[
            "Good morning!",
            "Where do I mail the completed VA Form 10182 for a Board Appeal?",
            "What is the time limit to request it?",
            "How can I get a copy of the form?",
            "Thanks, goodbye!",
        ],
        annotations=[
            {"propositions_used": [], "explain_evaluation": "greeting",
             "evaluation": "accepted"},
            {"propositions_used": [
                "The completed VA Form 10182 is mailed to the Board of Veterans Appeals."],
             "explain_evaluation": "directly grounded", "evaluation": "accepted"},
            {"propositions_used": [
                # paraphrase: exercises BM25 closest-match alignment
                "Requesting a Board Appeal is only possible within one year of the decision."],
             "explain_evaluation": "paraphrased grounding", "evaluation": "accepted"},
            {"propositions_used": [
                "A copy of VA Form 10182 is available from a regional benefit office.",
                "VA Form 10182 can be requested by calling the VA hotline at 800-827-1000."],
             "explain_evaluation": "two propositions", "evaluation": "accepted"},
            {"propositions_used": [], "explain_evaluation": "closing",
             "evaluation": "accepted"},
        ],
    ),
}

CONFIG_TOML = """\
# Offline demo configuration for the bundled six-document fixture.
n = 6
backend = "mock"
seeds = [1, 2, 3]

[paths]
documents = "bundled"
fixtures = "bundled"
"""


def respond_entries(workdir: Path, responses_path: Path) -> list[dict]:
    """Run the mock pipeline end to end and script the two response-generation
    fixtures the `respond` command needs (an answer and a refusal)."""
    from convqa_synth import cli

    argv_common = [
        "--documents", str(FIXTURE_DIR / "docs.jsonl"),
        "--fixtures", str(responses_path),
        "--backend", "mock", "--n", "6",
        "--propositions", str(workdir / "props.jsonl"),
        "--dialogs", str(workdir / "dialogs.jsonl"),
        "--indexes", str(workdir / "indexes"),
        "--reports", str(workdir / "reports"),
    ]
    assert cli.main(["synthesize", *argv_common]) == 0
    assert cli.main(["index", *argv_common]) == 0

    from convqa_synth.corpus import load_propositions
    from convqa_synth.dialog_synth import load_dialogs
    from convqa_synth.rewrite import Formulation, formulate

    config = load_config(None, {
        "documents": str(FIXTURE_DIR / "docs.jsonl"),
        "fixtures": str(responses_path),
        "propositions": str(workdir / "props.jsonl"),
        "dialogs": str(workdir / "dialogs.jsonl"),
        "indexes": str(workdir / "indexes"),
        "backend": "mock", "n": 6,
    })
    repo = load_propositions(config.paths.propositions)
    dialogs = load_dialogs(config.paths.dialogs, repo=repo)
    engine = cli._load_engine(config, "rrf")

    entries = []
    cases = [
        # (dialog id, turn, scripted response)
        ("dlg-00002", 2,
         "You have one year from the date on your decision to request a Board Appeal."),
        ("dlg-00001", 3, "<cannot_answer>"),
    ]
    for dialog_id, turn, scripted in cases:
        dialog = next(d for d in dialogs if d.id == dialog_id)
        query = formulate(dialog, turn, Formulation(kind="query_de"))
        results = engine.retrieve("rrf", query, k=config.top_k)
        bindings = {
            "propositions": json.dumps(
                [repo[item_id].text for item_id, _ in results.entries],
                ensure_ascii=False),
            "question": query,
        }
        entries.append({
            "template": "response_gen",
            "fingerprint": fingerprint("response_gen", bindings),
            "response": scripted,
        })
    return entries


def main() -> None:
    FIXTURE_DIR.mkdir(parents=True, exist_ok=True)
    save_documents(DOCS, FIXTURE_DIR / "docs.jsonl")

    responses = build_responses(DOCS, STEP1, SCRIPTS, n=6)
    entries = [
        {"template": template, "fingerprint": fp, "response": response}
        for (template, fp), response in sorted(responses.items())
    ]
    responses_path = FIXTURE_DIR / "responses.jsonl"
    _write_entries(responses_path, entries)

    with tempfile.TemporaryDirectory() as tmp:
        entries.extend(respond_entries(Path(tmp), responses_path))
    _write_entries(responses_path, entries)

    (FIXTURE_DIR / "config.toml").write_text(CONFIG_TOML, encoding="utf-8")
    print(f"wrote {len(entries)} fixture responses to {responses_path}")


def _write_entries(path: Path, entries: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for entry in entries:
            handle.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
