"""Template-grammar task-oriented dialogs for desk-scale experiments.

Each dialog stays in one domain.  The first exchange searches for a venue,
later ones request attributes, make a booking or close the dialog.  Every
system response is a deterministic function of the preceding user utterance
(the user phrasing varies, the system phrasing does not), so a model can
drive the training loss towards zero.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .corpus import Dialog, Turn
from .metrics import extract_entities

DEFAULT_GRAMMAR: Dict = {
    "domains": {
        "restaurant": {"informable": ["food", "area", "price"], "requestable": ["phone", "address", "postcode"], "bookable": True},
        "hotel": {"informable": ["area", "price", "stars", "parking"], "requestable": ["phone", "address", "postcode"], "bookable": True},
        "attraction": {"informable": ["type", "area"], "requestable": ["phone", "address", "postcode"], "bookable": False},
        "train": {"informable": ["departure", "destination", "day"], "requestable": ["trainid", "ticket", "duration"], "bookable": True},
    },
    "min_exchanges": 2,
    "max_exchanges": 4,
}

INFORM_PHRASE = {
    "food": "serving [value_food] food",
    "area": "in the [value_area]",
    "price": "in the [value_price] price range",
    "stars": "with [value_stars] stars",
    "parking": "with free parking",
    "type": "that is a [value_type]",
    "departure": "leaving from [value_departure]",
    "destination": "going to [value_destination]",
    "day": "on [value_day]",
}

SLOT_WORDS = {
    "phone": "phone number",
    "address": "address",
    "postcode": "postcode",
    "trainid": "train id",
    "ticket": "ticket price",
    "duration": "travel time",
}

USER_SEARCH = [
    "i am looking for a {domain} {phrases} .",
    "i need a {domain} {phrases} .",
    "can you find me a {domain} {phrases} ?",
    "please help me find a {domain} {phrases} .",
]
USER_REQUEST = [
    "what is the {slots} of the {domain} ?",
    "can i get the {slots} of the {domain} ?",
    "could you tell me the {slots} of the {domain} ?",
]
USER_BOOK = [
    "please book the {domain} for [value_people] people on [value_day] .",
    "can you book the {domain} for [value_people] people on [value_day] ?",
]
USER_BYE = ["thank you , goodbye .", "thanks , that is all .", "that is all i need , bye ."]


@dataclass
class SynthConfig:
    domains: Dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_GRAMMAR["domains"]))
    min_exchanges: int = 2
    max_exchanges: int = 4

    @classmethod
    def from_json(cls, path: Optional[str]) -> "SynthConfig":
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls(**{k: raw[k] for k in ("domains", "min_exchanges", "max_exchanges") if k in raw})


def _join(parts: List[str]) -> str:
    return parts[0] if len(parts) == 1 else " , ".join(parts[:-1]) + " and " + parts[-1]


def _pick(rng: np.random.Generator, items: List, k: int) -> List:
    idx = sorted(rng.choice(len(items), size=k, replace=False))
    return [items[i] for i in idx]


def _search(rng, domain, dom, belief):
    slots = _pick(rng, dom["informable"], int(rng.integers(1, min(3, len(dom["informable"])) + 1)))
    phrases = " ".join(INFORM_PHRASE[s] for s in slots)
    user = USER_SEARCH[rng.integers(len(USER_SEARCH))].format(domain=domain, phrases=phrases)
    system = f"[{domain}_name] is a {domain} {phrases} . would you like more information ?"
    for s in slots:
        belief += [s, "[value_%s]" % s if s != "parking" else "yes"]
    return user, system, [domain, "inform", "name", *slots, "reqmore"], []


def _request(rng, domain, dom, remaining):
    slots = _pick(rng, remaining, int(rng.integers(1, min(2, len(remaining)) + 1)))
    for s in slots:
        remaining.remove(s)
    words = _join([SLOT_WORDS[s] for s in slots])
    user = USER_REQUEST[rng.integers(len(USER_REQUEST))].format(slots=words, domain=domain)
    facts = _join([f"the {SLOT_WORDS[s]} is [{domain}_{s}]" for s in slots])
    system = f"{facts} . anything else ?"
    return user, system, [domain, "inform", *slots, "reqmore"], slots


def _book(rng, domain):
    user = USER_BOOK[rng.integers(len(USER_BOOK))].format(domain=domain)
    system = f"i have booked the {domain} . your reference number is [{domain}_ref] ."
    return user, system, ["booking", "book", "ref", "people", "day"], []


def generate_synthetic_corpus(seed: int = 0, n_dialogs: int = 50, grammar: Optional[SynthConfig] = None) -> List[Dialog]:
    if n_dialogs < 1:
        raise ValueError("n_dialogs must be >= 1")
    g = grammar or SynthConfig()
    rng = np.random.default_rng(seed)
    names = sorted(g.domains)
    dialogs = []
    for k in range(n_dialogs):
        domain = names[rng.integers(len(names))]
        dom = g.domains[domain]
        n_ex = int(rng.integers(g.min_exchanges, g.max_exchanges + 1))
        belief = [domain]
        remaining = list(dom["requestable"])
        booked = False
        turns = []
        for e in range(n_ex):
            last = e == n_ex - 1
            if e == 0:
                user, system, acts, req = _search(rng, domain, dom, belief)
            elif last and rng.random() < 0.5:
                user = USER_BYE[rng.integers(len(USER_BYE))]
                system, acts, req = "you are welcome . goodbye .", ["general", "bye"], []
            elif dom.get("bookable") and not booked and (not remaining or rng.random() < 0.3):
                booked = True
                user, system, acts, req = _book(rng, domain)
                belief += ["people", "[value_people]", "day", "[value_day]"]
            elif remaining:
                user, system, acts, req = _request(rng, domain, dom, remaining)
            else:
                user = USER_BYE[rng.integers(len(USER_BYE))]
                system, acts, req = "you are welcome . goodbye .", ["general", "bye"], []
            sys_tokens = system.split()
            turns.append(Turn("user", user.split(), goal_entities=sorted(set(extract_entities(sys_tokens))),
                              requested=list(req)))
            turns.append(Turn("sys", sys_tokens, belief=list(belief), act=list(dict.fromkeys(acts))))
        dialogs.append(Dialog(f"synth-{seed}-{k:05d}", turns))
    return dialogs


def oracle_self_check(dialogs: List[Dialog]) -> bool:
    """Every system response's entities are goal entities, so echoing references informs fully."""
    for d in dialogs:
        goal = d.goal_entities or set()
        for t in d.turns:
            if t.spk == "sys" and not set(extract_entities(t.text)) <= goal:
                return False
    return True
