import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pytest

from corpus import Sentence, build_document, sentence_from_text
from ctgov_supervision import ClinicalRecord, parse_record
from maxent_sentfinder import MaxEntModel
from qa_scorer import AgeAnswer, AgeQuestion

# --------------------------- Example sentences ---------------------------

SMOKERS_18_23 = "Participants were 83 smokers, who were 18-23 years old and undergraduate students at a university."
RANDOMIZED_18_24 = ("participants aged 18-24 years were randomized to a brief office intervention (n=99) "
       "or to an expressive writing plus brief office intervention (n=97).")
HAD_TO_18_60 = "To be included in the study, smokers had to be between the ages of 18 and 60 years."
IF_AT_LEAST_18 = ("The subjects were eligible for inclusion if they were at least 18 years of age, "
       "reported smoking 10 or more cigarettes per day, and were willing to set a quit date.")
PREVALENCE_18_24 = "An estimated 23.6% of young adults aged 18-24 years are current smokers."
FIRST_CIGARETTE_11_12 = "Smoking Dutch youths had in many cases tried their first cigarette at the age of 11-12 years."
ELIGIBILITY_LIST = ("Eligibility for this study included being a student (full or part time), smoking at least "
                   "1 cigarette/day in each of the past 7 days, being aged 18-24 years, and being interested "
                   "in quitting smoking in the next 6 months.")

AGE_CLAUSE = "Women and men at least 21 years of age with suspected NSCLC to be confirmed after surgery."
AGE_CLAUSE_RECORD = {
    "nct_id": "NCT00000001",
    "criteria": ("Inclusion Criteria:\n\n"
                 f"  - {AGE_CLAUSE}\n"
                 "  - Written informed consent.\n\n"
                 "Exclusion Criteria:\n\n"
                 "  - Prior chemotherapy or radiotherapy of the chest.\n"),
    "minimum_age": "21 Years",
    "maximum_age": "N/A",
    "description": "Patients undergo surgery. Tumor samples are analysed for gene expression.",
}


def sent(text: str, section: str = "method", index: int = 0) -> Sentence:
    return sentence_from_text(text, section=section, index=index)


def always_positive_sentfinder() -> MaxEntModel:
    return MaxEntModel(vocabulary=[], weights=np.zeros(0), bias=5.0)


class ScriptedAnswerer:
    """Answers from a table {(sentence prefix, kind): (value, confidence)}."""

    def __init__(self, script: Dict[Tuple[str, str], Tuple[int, float]]):
        self.script = script

    def answer(self, s: Sentence, q: AgeQuestion) -> Optional[AgeAnswer]:
        for (prefix, kind), (value, confidence) in self.script.items():
            if kind == q.kind and s.text.startswith(prefix):
                tok = next(t for t in s.tokens if t.numeric_value == value)
                return AgeAnswer(value, confidence, kind, s.index, (tok.start, tok.end), s.text)
        return None


@pytest.fixture
def age_clause_record() -> ClinicalRecord:
    return parse_record(AGE_CLAUSE_RECORD)

# --------------------------- Synthetic registry ---------------------------

_BOTH_BOUNDS = [
    "Healthy smokers aged {lo}-{hi} years",
    "Smokers aged {lo}-{hi} years who smoke at least {k} cigarettes per day",
    "Men and women between {lo} and {hi} years of age",
    "Participants {lo} to {hi} years old",
    "Age from {lo} to {hi} years",
    "Adults aged {lo} - {hi} years with a diagnosis of {condition}",
    "Patients between the ages of {lo} and {hi} years",
]
_MIN_ONLY = [
    "Women and men at least {lo} years of age with {condition}",
    "Age >= {lo} years",
    "Men and women {lo} years or older",
    "Adults aged {lo} years and older",
]
_MAX_ONLY = [
    "Children up to {hi} years of age",
    "Patients younger than {hi} years",
]
_OTHER_CRITERIA = [
    "Written informed consent",
    "Body mass index between {b1} and {b2} kg/m2",
    "Smoking at least {k} cigarettes per day for the past {m} months",
    "Pregnancy or breastfeeding",
    "Current use of nicotine replacement therapy",
    "Uncontrolled hypertension (systolic pressure above {bp} mmHg)",
]
_CONDITIONS = ["asthma", "type 2 diabetes", "major depression", "chronic pain", "nicotine dependence", "NSCLC"]
_DRUGS = ["Varenicline", "Bupropion", "Nicotine patch", "Cytisine", "Counseling", "A text message program"]
_OUTCOMES = ["abstinence", "craving", "withdrawal symptoms", "cotinine levels", "relapse", "quit attempts"]
_VERBS = ["is compared with placebo in", "is evaluated in", "is offered to", "is tested among"]
_POPULATIONS = ["smokers", "patients with asthma", "hospitalized patients", "pregnant smokers", "students"]
_ACTIVITIES = ["receive weekly counseling", "smoked daily before enrollment", "complete a daily diary",
               "attend four group sessions", "use a mobile app"]


def make_registry(n: int, seed: int = 7) -> List[dict]:
    """Registry records in the raw input schema with ages taken from the templates."""
    rng = np.random.default_rng(seed)
    pick = lambda items: items[int(rng.integers(len(items)))]
    records = []
    for i in range(n):
        lo = int(rng.integers(10, 40))
        hi = lo + int(rng.integers(5, 50))
        fill = dict(lo=lo, hi=hi, k=int(rng.integers(5, 30)), condition=pick(_CONDITIONS),
                    b1=int(rng.integers(17, 21)), b2=int(rng.integers(28, 40)), m=int(rng.integers(2, 13)),
                    bp=int(rng.integers(150, 190)))
        roll = rng.random()
        if roll < 0.7:
            template, min_age, max_age = pick(_BOTH_BOUNDS), f"{lo} Years", f"{hi} Years"
        elif roll < 0.9:
            template, min_age, max_age = pick(_MIN_ONLY), f"{lo} Years", "N/A"
        else:
            template, min_age, max_age = pick(_MAX_ONLY), "N/A", f"{hi} Years"
        others = [pick(_OTHER_CRITERIA).format(**fill) for _ in range(2)]
        criteria = ("Inclusion Criteria:\n\n"
                    f"  - {template.format(**fill)}\n"
                    f"  - {others[0]}\n\n"
                    "Exclusion Criteria:\n\n"
                    f"  - {others[1]}\n")
        description = (f"{pick(_DRUGS)} {pick(_VERBS)} {pick(_POPULATIONS)}. "
                       f"The primary outcome is {pick(_OUTCOMES)} at week {int(rng.integers(4, 53))}. "
                       f"Participants {pick(_ACTIVITIES)}.")
        records.append({"nct_id": f"NCT{i:08d}", "criteria": criteria, "minimum_age": min_age,
                        "maximum_age": max_age, "description": description})
    return records

# --------------------------- Synthetic articles ---------------------------

_FACTUAL = [
    "Participants were {n} smokers, who were {lo}-{hi} years old and undergraduate students at a university.",
    "In total, {n} participants aged {lo}-{hi} years were randomized to a brief office intervention.",
    "The {n} participants were between {lo} and {hi} years of age.",
    "Participants ranged in age from {lo} to {hi} years.",
]
_SPECULATIVE = [
    "To be included in the study, smokers had to be between the ages of {a} and {b} years.",
    "The subjects were eligible for inclusion if they were at least {a} years of age, "
    "reported smoking 10 or more cigarettes per day, and were willing to set a quit date.",
]
_INTRO = [
    "An estimated 23.6% of young adults aged 18-24 years are current smokers.",
    "Smoking Dutch youths had in many cases tried their first cigarette at the age of 11-12 years.",
]


def make_articles(n: int = 20, seed: int = 11) -> Tuple[List[dict], Dict[str, Tuple[Optional[int], Optional[int]]]]:
    """Articles in the document schema plus their gold (min, max) ages; the last one carries the
    speculative eligibility sentence that the cue filter misses."""
    rng = np.random.default_rng(seed)
    docs, gold = [], {}
    for i in range(n):
        doc_id = f"article-{i:02d}"
        lo = int(rng.integers(16, 30))
        hi = lo + int(rng.integers(5, 40))
        factual = _FACTUAL[i % len(_FACTUAL)].format(n=int(rng.integers(40, 400)), lo=lo, hi=hi)
        speculative = _SPECULATIVE[i % len(_SPECULATIVE)].format(a=18, b=60)
        method = [f"This randomized trial was conducted at {int(rng.integers(2, 9))} clinics. {speculative}"]
        if i == n - 1:
            lo, hi = 18, 23
            factual = SMOKERS_18_23
            method = [ELIGIBILITY_LIST]
        docs.append({
            "id": doc_id,
            "sections": [
                {"name": "abstract", "paragraphs": ["We evaluated a brief smoking cessation intervention."]},
                {"name": "introduction", "paragraphs": [_INTRO[i % len(_INTRO)]]},
                {"name": "method", "paragraphs": method},
                {"name": "result", "paragraphs": [f"{factual} Most participants were female."]},
                {"name": "discussion", "paragraphs": ["The intervention was well received."]},
            ],
        })
        gold[doc_id] = (lo, hi)
    return docs, gold


def write_jsonl_file(path: Path, records: List[dict]) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def write_gold_csv(path: Path, gold: Dict[str, Tuple[Optional[int], Optional[int]]]) -> Path:
    rows = ["doc_id,min_age,max_age"]
    rows += [f"{doc_id},{'' if lo is None else lo},{'' if hi is None else hi}" for doc_id, (lo, hi) in gold.items()]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def document_from(sections: List[Tuple[str, List[str]]], doc_id: str = "doc"):
    return build_document(doc_id, sections)
