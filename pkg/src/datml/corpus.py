"""Dialogue data model, synthetic multi-domain corpus generation, splits.

Dialogues are user/system turn pairs annotated with knowledge-base entities.
The synthetic generator builds several domains that share exchange structure
(greeting / request / detail question) but have disjoint slot-value
inventories and domain-specific phrasing, so transfer across domains is
possible without being free.

On-disk formats:
  corpus: JSON Lines, one dialogue per line:
    {"dialogue_id": str, "domains": [str], "turns": [
        {"speaker": "usr"|"sys", "domain": str, "text": str,
         "entities": [{"slot": str, "value": str}]}]}
  kb: JSON: {domain: [{slot: value, ...}, ...]}
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field

_TOKEN_RE = re.compile(r"[a-z0-9']+")

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace/punctuation."""
    return _TOKEN_RE.findall(text.lower())


class CorpusError(ValueError):
    pass


@dataclass
class Turn:
    speaker: str                    # "usr" | "sys"
    text: str
    domain: str
    entities: set = field(default_factory=set)  # {(slot, value)}

    def __post_init__(self):
        if self.speaker not in ("usr", "sys"):
            raise CorpusError(f"bad speaker '{self.speaker}'")
        self.tokens = tokenize(self.text)

    def validate(self) -> None:
        text_tokens = self.tokens
        for slot, value in self.entities:
            vt = tokenize(value)
            if not _contains_span(text_tokens, vt):
                raise CorpusError(f"entity value '{value}' not present in turn text '{self.text}'")


def _contains_span(tokens: list[str], span: list[str]) -> bool:
    n = len(span)
    return any(tokens[i : i + n] == span for i in range(len(tokens) - n + 1))


@dataclass
class Dialogue:
    id: str
    turns: list

    def __post_init__(self):
        if not self.turns:
            raise CorpusError(f"dialogue {self.id} has no turns")
        self.domains = {t.domain for t in self.turns}

    def validate(self) -> None:
        if len(self.turns) % 2 != 0:
            raise CorpusError(f"dialogue {self.id}: odd number of turns")
        for i, turn in enumerate(self.turns):
            expect = "usr" if i % 2 == 0 else "sys"
            if turn.speaker != expect:
                raise CorpusError(f"dialogue {self.id}: turn {i} should be {expect}")
            turn.validate()


class KnowledgeBase:
    """Per-domain entity tables: domain -> list of {slot: value}."""

    def __init__(self, tables: dict[str, list[dict[str, str]]]):
        self.tables = tables
        self._match_index: dict[str, list] = {}

    def domains(self):
        return list(self.tables)

    def values(self, domain: str) -> set:
        out = set()
        for row in self.tables.get(domain, []):
            out.update(row.values())
        return out

    def _index(self, domain: str):
        # (token-tuple, slot, canonical value), longest span first; first
        # occurrence wins on slot collisions
        cached = self._match_index.get(domain)
        if cached is None:
            seen = {}
            for row in self.tables[domain]:
                for slot, value in row.items():
                    key = tuple(tokenize(value))
                    if key and key not in seen:
                        seen[key] = (slot, value)
            cached = sorted(
                ((k, s, v) for k, (s, v) in seen.items()),
                key=lambda e: (-len(e[0]), e[0]),
            )
            self._match_index[domain] = cached
        return cached


@dataclass
class ExchangeTemplate:
    usr: str
    sys: str
    sys_slots: tuple = ()   # slots whose values are annotated on the sys turn


@dataclass
class DomainSpec:
    name: str
    slots: dict                     # slot -> list of values
    exchanges: list                 # ExchangeTemplate
    openers: list = field(default_factory=list)   # (usr, sys) no-entity pairs
    closers: list = field(default_factory=list)

    def validate(self) -> None:
        if not self.slots or not self.exchanges:
            raise CorpusError(f"domain {self.name}: needs slots and exchange templates")
        for slot, values in self.slots.items():
            if not values or any(not v for v in values):
                raise CorpusError(f"domain {self.name}: slot '{slot}' has empty values")
        pat = re.compile(r"\{(\w+)\}")
        for ex in self.exchanges:
            for text in (ex.usr, ex.sys):
                for ref in pat.findall(text):
                    if ref not in self.slots:
                        raise CorpusError(
                            f"domain {self.name}: template references undeclared slot '{ref}'"
                        )


@dataclass
class CorpusSpec:
    domains: list                   # DomainSpec
    dialogues_per_domain: int = 150
    multi_domain_fraction: float = 0.15
    exchanges_per_dialogue: tuple = (1, 2)
    seed: int = 271

    def validate(self) -> None:
        if len(self.domains) < 3:
            raise CorpusError("need at least 3 domains (2 source + 1 target)")
        if self.dialogues_per_domain < 1:
            raise CorpusError("dialogues_per_domain must be positive")
        if not (0.0 <= self.multi_domain_fraction <= 1.0):
            raise CorpusError("multi_domain_fraction must lie in [0, 1]")
        lo, hi = self.exchanges_per_dialogue
        if lo < 1 or hi < lo:
            raise CorpusError("bad exchanges_per_dialogue range")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise CorpusError("duplicate domain names")
        for d in self.domains:
            d.validate()


# ---------------------------------------------------------------------------
# synthetic corpus


def _render(template: str, row: dict) -> str:
    return template.format(**row)


def _make_exchange(domain: DomainSpec, rng: random.Random) -> tuple[Turn, Turn]:
    ex = rng.choice(domain.exchanges)
    row = {slot: rng.choice(values) for slot, values in domain.slots.items()}
    usr = Turn("usr", _render(ex.usr, row), domain.name)
    entities = {(slot, row[slot]) for slot in ex.sys_slots}
    sys = Turn("sys", _render(ex.sys, row), domain.name, entities)
    return usr, sys


def _make_dialogue(
    did: str, specs: list[DomainSpec], rng: random.Random, n_exchanges: int
) -> Dialogue:
    turns = []
    first = specs[0]
    if first.openers and rng.random() < 0.5:
        u, s = rng.choice(first.openers)
        turns += [Turn("usr", u, first.name), Turn("sys", s, first.name)]
    for i in range(n_exchanges):
        dom = specs[i % len(specs)]
        turns.extend(_make_exchange(dom, rng))
    last = specs[(n_exchanges - 1) % len(specs)]
    if last.closers and rng.random() < 0.4:
        u, s = rng.choice(last.closers)
        turns += [Turn("usr", u, last.name), Turn("sys", s, last.name)]
    return Dialogue(did, turns)


def generate_corpus(spec: CorpusSpec) -> tuple[list[Dialogue], KnowledgeBase]:
    """Deterministic synthetic corpus: same spec and seed give identical output."""
    spec.validate()
    rng = random.Random(spec.seed)
    kb = KnowledgeBase(
        {
            d.name: _kb_rows(d)
            for d in spec.domains
        }
    )
    total = len(spec.domains) * spec.dialogues_per_domain
    n_multi = int(round(spec.multi_domain_fraction * total))
    multi_every = math.inf if n_multi == 0 else max(1, total // n_multi)
    lo, hi = spec.exchanges_per_dialogue
    dialogues = []
    counter = 0
    for d_idx, dom in enumerate(spec.domains):
        for i in range(spec.dialogues_per_domain):
            counter += 1
            specs = [dom]
            if counter % multi_every == 0 and len(dialogues) and n_multi > 0:
                other = spec.domains[(d_idx + 1 + rng.randrange(len(spec.domains) - 1)) % len(spec.domains)]
                if other.name != dom.name:
                    specs = [dom, other]
            n_ex = rng.randint(max(lo, len(specs)), max(hi, len(specs)))
            dlg = _make_dialogue(f"dlg-{dom.name}-{i:04d}", specs, rng, n_ex)
            dlg.validate()
            dialogues.append(dlg)
    return dialogues, kb


def _kb_rows(d: DomainSpec) -> list[dict[str, str]]:
    slots = list(d.slots)
    n = max(len(v) for v in d.slots.values())
    rows = []
    for i in range(n):
        rows.append({slot: d.slots[slot][i % len(d.slots[slot])] for slot in slots})
    return rows


# ---------------------------------------------------------------------------
# built-in domains for desk-scale experiments

_AREAS = ["north", "south", "east", "west", "centre", "riverside"]


def _names(prefixes, suffixes):
    return [f"{p} {s}" for p in prefixes for s in suffixes]


def _builtin_domains() -> list[DomainSpec]:
    restaurant = DomainSpec(
        name="restaurant",
        slots={
            "name": _names(["golden", "silver", "jade"], ["palace", "garden", "lotus", "dragon"]),
            "area": _AREAS,
            "food": ["noodle house", "tapas bar", "curry kitchen", "steak grill", "sushi counter"],
        },
        exchanges=[
            ExchangeTemplate(
                usr="i want a table at {name} in the {area}",
                sys="your table at {name} in the {area} is reserved",
                sys_slots=("name", "area"),
            ),
            ExchangeTemplate(
                usr="can you find me a {food} somewhere in the {area}",
                sys="i suggest {name} which is a lovely {food} in the {area}",
                sys_slots=("name", "food", "area"),
            ),
            ExchangeTemplate(
                usr="what kind of place is {name}",
                sys="{name} is a popular {food}",
                sys_slots=("name", "food"),
            ),
        ],
        openers=[("hi i am looking for somewhere to eat", "hello i can help you find a restaurant")],
        closers=[("great thank you for the meal tip", "enjoy your meal goodbye")],
    )
    hotel = DomainSpec(
        name="hotel",
        slots={
            "name": _names(["royal", "grand", "cosy"], ["crown inn", "harbour lodge", "maple house", "station hotel"]),
            "area": _AREAS,
            "stars": ["two star", "three star", "four star", "five star"],
        },
        exchanges=[
            ExchangeTemplate(
                usr="i need a room at {name} for tonight",
                sys="a room at {name} in the {area} is booked for you",
                sys_slots=("name", "area"),
            ),
            ExchangeTemplate(
                usr="please book me a {stars} hotel in the {area}",
                sys="i have booked {name} which is a fine {stars} hotel",
                sys_slots=("name", "stars"),
            ),
            ExchangeTemplate(
                usr="how good is {name}",
                sys="{name} is rated {stars} by our guests",
                sys_slots=("name", "stars"),
            ),
        ],
        openers=[("hello i need a place to stay", "welcome i can arrange a hotel for you")],
        closers=[("thanks that covers everything", "have a pleasant stay goodbye")],
    )
    attraction = DomainSpec(
        name="attraction",
        slots={
            "name": _names(["old", "river", "sunset"], ["castle", "gallery", "observatory", "gardens"]),
            "area": _AREAS,
            "type": ["museum tour", "boat trip", "concert hall", "science centre", "art walk"],
        },
        exchanges=[
            ExchangeTemplate(
                usr="what can i visit near the {area}",
                sys="you could visit {name} over in the {area}",
                sys_slots=("name", "area"),
            ),
            ExchangeTemplate(
                usr="any {type} happening around the {area}",
                sys="{name} runs a {type} that visitors love",
                sys_slots=("name", "type"),
            ),
            ExchangeTemplate(
                usr="tell me more about {name}",
                sys="{name} is best known as a {type}",
                sys_slots=("name", "type"),
            ),
        ],
        openers=[("hi what is fun to see here", "greetings i know all the local attractions")],
        closers=[("lovely that sounds perfect", "enjoy the sights goodbye")],
    )
    taxi = DomainSpec(
        name="taxi",
        slots={
            "name": _names(["speedy", "comfort", "metro"], ["cars", "cabs", "rides", "shuttle"]),
            "area": _AREAS,
            "cartype": ["black sedan", "electric van", "minibus", "estate car"],
        },
        exchanges=[
            ExchangeTemplate(
                usr="get me a taxi to the {area} please",
                sys="{name} will pick you up heading to the {area}",
                sys_slots=("name", "area"),
            ),
            ExchangeTemplate(
                usr="i would like a {cartype} from {name}",
                sys="{name} confirmed a {cartype} for your trip",
                sys_slots=("name", "cartype"),
            ),
            ExchangeTemplate(
                usr="which company drives to the {area}",
                sys="{name} serves the {area} with a {cartype}",
                sys_slots=("name", "area", "cartype"),
            ),
        ],
        openers=[("hello i need transport", "sure i can call you a cab")],
        closers=[("thanks see you at pickup", "safe travels goodbye")],
    )
    train = DomainSpec(
        name="train",
        slots={
            "name": _names(["dawn", "valley", "coastal"], ["express", "flyer", "sprinter", "liner"]),
            "area": _AREAS,
            "ticket": ["first class", "standard return", "open single", "group saver"],
        },
        exchanges=[
            ExchangeTemplate(
                usr="is there a train towards the {area}",
                sys="the {name} departs for the {area} on the hour",
                sys_slots=("name", "area"),
            ),
            ExchangeTemplate(
                usr="book a {ticket} on the {name}",
                sys="your {ticket} aboard the {name} is confirmed",
                sys_slots=("ticket", "name"),
            ),
            ExchangeTemplate(
                usr="what fares exist for {name}",
                sys="the {name} offers a {ticket} fare today",
                sys_slots=("name", "ticket"),
            ),
        ],
        openers=[("hi i have to catch a train", "happy to check the rail schedule")],
        closers=[("perfect that is my journey sorted", "mind the gap goodbye")],
    )
    cinema = DomainSpec(
        name="cinema",
        slots={
            "name": _names(["lunar", "plaza", "vintage"], ["screen", "pictures", "cinema", "filmhouse"]),
            "area": _AREAS,
            "genre": ["space opera", "family comedy", "silent classic", "crime thriller"],
        },
        exchanges=[
            ExchangeTemplate(
                usr="what film is on in the {area} tonight",
                sys="{name} in the {area} has seats left tonight",
                sys_slots=("name", "area"),
            ),
            ExchangeTemplate(
                usr="i fancy a {genre} at {name}",
                sys="two tickets at {name} for the {genre} then",
                sys_slots=("name", "genre"),
            ),
            ExchangeTemplate(
                usr="does {name} show anything good",
                sys="{name} is screening a {genre} this week",
                sys_slots=("name", "genre"),
            ),
        ],
        openers=[("hello i want to watch a movie", "of course let me check the listings")],
        closers=[("brilliant i will grab popcorn", "enjoy the film goodbye")],
    )
    return [restaurant, hotel, attraction, taxi, train, cinema]


def default_corpus_spec(
    n_domains: int = 4,
    dialogues_per_domain: int = 150,
    multi_domain_fraction: float = 0.15,
    exchanges_per_dialogue: tuple = (1, 2),
    seed: int = 271,
) -> CorpusSpec:
    builtin = _builtin_domains()
    if not (3 <= n_domains <= len(builtin)):
        raise CorpusError(f"n_domains must lie in [3, {len(builtin)}]")
    return CorpusSpec(
        domains=builtin[:n_domains],
        dialogues_per_domain=dialogues_per_domain,
        multi_domain_fraction=multi_domain_fraction,
        exchanges_per_dialogue=exchanges_per_dialogue,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# splits and few-shot sampling


def split_for_target(
    corpus: list[Dialogue],
    target_domain: str,
    val_fraction: float = 0.10,
    test_fraction: float = 0.30,
    seed: int = 271,
):
    """Partition into (source, target train pool, target val, target test).

    Every dialogue touching the target domain -- including multi-domain ones
    -- is excluded from the source set.
    """
    all_domains = set()
    for d in corpus:
        all_domains |= d.domains
    if target_domain not in all_domains:
        raise CorpusError(f"unknown target domain '{target_domain}'")
    source = [d for d in corpus if target_domain not in d.domains]
    target_pool = [d for d in corpus if target_domain in d.domains]
    remaining = set()
    for d in source:
        remaining |= d.domains
    if len(remaining) < 2:
        raise CorpusError(
            f"only {len(remaining)} source domain(s) remain after excluding '{target_domain}'"
        )
    pool = list(target_pool)
    random.Random(seed).shuffle(pool)
    n = len(pool)
    n_val = max(1, int(round(val_fraction * n)))
    n_test = max(1, int(round(test_fraction * n)))
    if n_val + n_test >= n:
        raise CorpusError(f"target pool of {n} dialogues too small for the requested splits")
    val = pool[:n_val]
    test = pool[n_val : n_val + n_test]
    train_pool = pool[n_val + n_test :]
    return source, train_pool, val, test


def sample_fewshot(pool: list[Dialogue], fraction: float, seed: int = 271) -> list[Dialogue]:
    """ceil(fraction * |pool|) dialogues, uniform without replacement."""
    if not pool:
        raise CorpusError("few-shot pool is empty")
    if not (0.0 < fraction <= 1.0):
        raise CorpusError(f"fraction must lie in (0, 1], got {fraction}")
    count = math.ceil(fraction * len(pool))
    return random.Random(seed).sample(pool, count)


def extract_entities(text, domain: str, kb: KnowledgeBase) -> set:
    """Surface-match KB values of ``domain`` in ``text`` (tokens or string).

    Case-insensitive, token-boundary matching; overlaps resolve longest match
    first, left to right.
    """
    if domain not in kb.tables:
        raise CorpusError(f"domain '{domain}' not in knowledge base")
    tokens = tokenize(text) if isinstance(text, str) else [t.lower() for t in text]
    index = kb._index(domain)
    found = set()
    i = 0
    while i < len(tokens):
        matched = False
        for span, slot, value in index:
            n = len(span)
            if tuple(tokens[i : i + n]) == span:
                found.add((slot, value))
                i += n
                matched = True
                break
        if not matched:
            i += 1
    return found


# ---------------------------------------------------------------------------
# serialization


def save_corpus(dialogues: list[Dialogue], path) -> None:
    with open(path, "w") as f:
        for d in dialogues:
            rec = {
                "dialogue_id": d.id,
                "domains": sorted(d.domains),
                "turns": [
                    {
                        "speaker": t.speaker,
                        "domain": t.domain,
                        "text": t.text,
                        "entities": [
                            {"slot": s, "value": v} for s, v in sorted(t.entities)
                        ],
                    }
                    for t in d.turns
                ],
            }
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_corpus(path) -> list[Dialogue]:
    dialogues = []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{line_no}: invalid JSON ({e})") from None
            turns = [
                Turn(
                    t["speaker"],
                    t["text"],
                    t["domain"],
                    {(e["slot"], e["value"]) for e in t.get("entities", [])},
                )
                for t in rec["turns"]
            ]
            d = Dialogue(rec["dialogue_id"], turns)
            d.validate()
            dialogues.append(d)
    return dialogues


def save_kb(kb: KnowledgeBase, path) -> None:
    with open(path, "w") as f:
        json.dump(kb.tables, f, indent=2, sort_keys=True)


def load_kb(path) -> KnowledgeBase:
    with open(path) as f:
        tables = json.load(f)
    for domain, rows in tables.items():
        slots = None
        for row in rows:
            if slots is None:
                slots = set(row)
            elif set(row) != slots:
                raise CorpusError(f"kb domain '{domain}': inconsistent slot names")
            if any(not isinstance(v, str) or not v for v in row.values()):
                raise CorpusError(f"kb domain '{domain}': empty or non-string value")
    return KnowledgeBase(tables)
