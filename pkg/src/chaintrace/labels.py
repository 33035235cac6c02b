"""Chain labels and the label taxonomy.

A chain code is the secondary (previous) platform in lower case followed
by the primary (latest) platform in upper case, e.g. ``fblGOG``. The
taxonomy is plain data so other datasets can define their own platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


class InvalidChain(ValueError):
    pass


class UnknownPrimary(KeyError):
    pass


@dataclass(frozen=True, order=True)
class ChainLabel:
    secondary: str
    primary: str

    def __post_init__(self):
        if not (self.secondary.islower() and self.primary.isupper()):
            raise InvalidChain(f"bad chain parts {self.secondary!r}/{self.primary!r}")

    @property
    def code(self) -> str:
        return self.secondary + self.primary

    def __str__(self):
        return self.code

    @classmethod
    def parse(cls, code: str) -> ChainLabel:
        for i, ch in enumerate(code):
            if ch.isupper():
                if i == 0:
                    break
                return cls(code[:i], code[i:])
        raise InvalidChain(f"cannot parse chain code {code!r}")


@dataclass(frozen=True)
class Taxonomy:
    """Label sets, valid chains and the derived stage-2 head map.

    ``native`` is the primary meaning "never uploaded"; its lower-case form
    is the secondary meaning "no previous platform".
    """

    name: str
    primaries: tuple[str, ...]
    secondaries: tuple[str, ...]
    valid_chains: tuple[str, ...]
    native: str = "NAT"
    heads: dict = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "primaries", tuple(self.primaries))
        object.__setattr__(self, "secondaries", tuple(self.secondaries))
        object.__setattr__(self, "valid_chains", tuple(self.valid_chains))
        if len(self.primaries) < 2:
            raise ValueError("taxonomy needs at least two primary labels")
        if self.native not in self.primaries or self.native.lower() not in self.secondaries:
            raise ValueError(f"native label {self.native!r} missing from the label sets")
        for code in self.valid_chains:
            c = ChainLabel.parse(code)
            if c.primary not in self.primaries or c.secondary not in self.secondaries:
                raise ValueError(f"chain {code} uses labels outside the taxonomy")
        by_primary = {p: [] for p in self.primaries}
        for code in self.valid_chains:
            c = ChainLabel.parse(code)
            by_primary[c.primary].append(c.secondary)
        for p, secs in by_primary.items():
            if not secs:
                raise ValueError(f"primary {p} has no valid chain")
            if len(secs) == 1 and secs[0] != self.native.lower():
                raise ValueError(f"primary {p} has a single valid secondary other than "
                                 f"{self.native.lower()}")
        derived = {p: tuple(s for s in self.secondaries if s in secs)
                   for p, secs in by_primary.items() if len(secs) > 1}
        if self.heads is not None:
            given = {p: tuple(v) for p, v in self.heads.items()}
            if {p: set(v) for p, v in given.items()} != {p: set(v) for p, v in derived.items()}:
                raise ValueError("stage-2 head map disagrees with the valid chain set")
            derived = given
        object.__setattr__(self, "heads", derived)

    def chains(self) -> list[ChainLabel]:
        return [ChainLabel.parse(c) for c in self.valid_chains]

    def is_valid(self, chain: ChainLabel) -> bool:
        return chain.code in self.valid_chains

    def primary_index(self, primary: str) -> int:
        try:
            return self.primaries.index(primary)
        except ValueError:
            raise UnknownPrimary(primary) from None

    def head_classes(self, primary: str) -> tuple[str, ...]:
        """Secondaries a stage-2 head for `primary` predicts (empty if none)."""
        if primary not in self.primaries:
            raise UnknownPrimary(primary)
        return self.heads.get(primary, ())

    def to_json(self) -> dict:
        return {"name": self.name, "primaries": list(self.primaries),
                "secondaries": list(self.secondaries), "valid_chains": list(self.valid_chains),
                "native": self.native, "heads": {p: list(v) for p, v in self.heads.items()}}

    @classmethod
    def from_json(cls, d) -> Taxonomy:
        if isinstance(d, str):
            return TAXONOMIES[d]
        return cls(d["name"], d["primaries"], d["secondaries"], d["valid_chains"],
                   d.get("native", "NAT"), d.get("heads"))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


PAPER_TAXONOMY = Taxonomy(
    "paper",
    primaries=("NAT", "GOG", "FBH", "FBL", "WA"),
    secondaries=("nat", "gog", "fbh", "fbl", "wa"),
    valid_chains=("natNAT", "natGOG", "fbhGOG", "fblGOG", "waGOG",
                  "natFBH", "gogFBH", "fblFBH", "waFBH", "natFBL", "natWA"),
)

# Latest-platform classes of the VSMUD C2 subset; no image is shared twice on
# the same platform.
VSMUD_TAXONOMY = Taxonomy(
    "vsmud",
    primaries=("ORIG", "FB", "FL", "TW"),
    secondaries=("orig", "fb", "fl", "tw"),
    valid_chains=("origORIG", "origFB", "flFB", "twFB", "origFL", "fbFL", "twFL",
                  "origTW", "fbTW", "flTW"),
    native="ORIG",
)

# Desk-scale synthetic setup: three platforms, reposts only onto C.
SYNTHETIC_TAXONOMY = Taxonomy(
    "synthetic",
    primaries=("NAT", "A", "B", "C"),
    secondaries=("nat", "a", "b", "c"),
    valid_chains=("natNAT", "natA", "natB", "natC", "aC", "bC"),
)

TAXONOMIES = {t.name: t for t in (PAPER_TAXONOMY, VSMUD_TAXONOMY, SYNTHETIC_TAXONOMY)}
