"""Resolve prescription rows to molecular structures.

Resolution walks a fixed fallback chain: normalized generic name, then
normalized drug name, then the NDC code (which goes through the FDA drug
directory to an ingredient name and back into the compound lookup). Every
stage consults a JSON-lines cache first and records both hits and misses,
so a warmed cache answers a whole cohort without any network traffic.
Returned SMILES must parse with :mod:`drugfusion.smiles`; anything else is
rejected and cached as a miss.

The live clients speak to the public PubChem PUG REST and openFDA NDC
endpoints with client-side rate limiting and exponential-backoff retries.
All tests run against canned transports; live mode is opt-in.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

from .smiles import SmilesError, parse

__all__ = [
    "ResolverError",
    "InvalidNdc",
    "NetworkError",
    "NotFound",
    "ParseRejected",
    "CorruptLine",
    "DrugQuery",
    "ResolvedDrug",
    "Unresolved",
    "CacheEntry",
    "ResolutionCache",
    "normalize_name",
    "normalize_ndc",
    "resolve",
    "PubChemClient",
    "FdaNdcClient",
    "ClientSet",
    "RateLimiter",
]


class ResolverError(Exception):
    """Base class for resolver errors."""


class InvalidNdc(ResolverError, ValueError):
    """Raised when an NDC field cannot be normalized to digits."""


class NetworkError(ResolverError):
    """Raised when a live endpoint stays unreachable after retries."""


class NotFound(ResolverError):
    """Raised by clients when a lookup has no match (HTTP 404)."""


class ParseRejected(ResolverError):
    """Raised when a service returns a SMILES string that does not parse."""


class CorruptLine(ResolverError):
    """Raised when a cache file contains an unreadable line."""

    def __init__(self, path, lineno: int, reason: str):
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {reason}")


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

# Dosage-form and route tokens stripped from drug names during
# normalization. Deliberately conservative: salt words like "sodium" or
# "sulfate" are chemically meaningful and stay.
FORMULATION_TOKENS = frozenset(
    {
        "iv", "po", "im", "sq", "subq", "inj", "injection", "injectable",
        "syringe", "vial", "bag", "bottle", "kit", "soln", "solution",
        "susp", "suspension", "tab", "tablet", "tablets", "cap", "capsule",
        "capsules", "cream", "ointment", "gel", "patch", "spray", "drip",
        "infusion", "neb", "nebulizer", "inhaler", "oral", "topical",
        "drops", "gtt", "elixir", "syrup", "lotion", "suppository",
    }
)

_PARENTHETICAL = re.compile(r"\([^)]*\)")
_WHITESPACE = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Lowercase, drop parentheticals and formulation tokens, squeeze spaces.

    Examples: ``"Morphine Sulfate (Syringe)"`` becomes ``"morphine
    sulfate"``; ``"  ASPIRIN  "`` becomes ``"aspirin"``. The result may be
    empty, which callers treat as nothing to look up.
    """
    text = _PARENTHETICAL.sub(" ", name.lower())
    tokens = [t for t in _WHITESPACE.split(text) if t and t not in FORMULATION_TOKENS]
    return " ".join(tokens)


def normalize_ndc(ndc: str) -> str:
    """Normalize an NDC to a digit string, left-padded to 11 digits.

    A single trailing ``.0`` (a float-ingestion artifact) is stripped, as
    are hyphen and space separators. Any other non-digit content raises
    :class:`InvalidNdc`.
    """
    text = ndc.strip()
    if text.endswith(".0"):
        text = text[:-2]
    text = text.replace("-", "").replace(" ", "")
    if not text:
        raise InvalidNdc(f"empty NDC {ndc!r}")
    if not text.isdigit():
        raise InvalidNdc(f"non-digit characters in NDC {ndc!r}")
    if len(text) < 11:
        text = text.zfill(11)
    return text


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CacheEntry:
    key: str
    kind: str  # "name" or "ndc"
    resolved: bool
    cid: Optional[int] = None
    smiles: Optional[str] = None
    ts: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "key": self.key,
                "kind": self.kind,
                "cid": self.cid,
                "smiles": self.smiles,
                "resolved": self.resolved,
                "ts": self.ts,
            },
            sort_keys=True,
        )


class ResolutionCache:
    """Append-only JSON-lines cache; later lines win on key collisions."""

    def __init__(self, path: Optional[str | Path] = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str], CacheEntry] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with self.path.open() as handle:
            for lineno, line in enumerate(handle, start=1):
                stripped = line.strip()
                if not stripped:
                    continue
                try:
                    raw = json.loads(stripped)
                    entry = CacheEntry(
                        key=raw["key"],
                        kind=raw["kind"],
                        resolved=bool(raw["resolved"]),
                        cid=raw.get("cid"),
                        smiles=raw.get("smiles"),
                        ts=int(raw.get("ts", 0)),
                    )
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise CorruptLine(self.path, lineno, str(exc)) from None
                if entry.kind not in ("name", "ndc"):
                    raise CorruptLine(self.path, lineno, f"unknown kind {entry.kind!r}")
                self._entries[(entry.kind, entry.key)] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, kind: str, key: str) -> Optional[CacheEntry]:
        return self._entries.get((kind, key))

    def put(self, entry: CacheEntry) -> None:
        self._entries[(entry.kind, entry.key)] = entry
        if self.path is not None:
            with self.path.open("a") as handle:
                handle.write(entry.to_json() + "\n")


# ---------------------------------------------------------------------------
# Query / result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DrugQuery:
    drug_name: str = ""
    generic_name: str = ""
    ndc: str = ""


@dataclass(frozen=True)
class ResolvedDrug:
    query: DrugQuery
    cid: int
    smiles: str
    resolution_path: str  # generic_name | drug_name | ndc


@dataclass(frozen=True)
class Unresolved:
    query: DrugQuery
    reason: str


# ---------------------------------------------------------------------------
# Live clients
# ---------------------------------------------------------------------------


class RateLimiter:
    """Spaces calls so a service sees at most ``rate`` requests per second."""

    def __init__(self, rate: float = 5.0, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._last: Optional[float] = None

    def wait(self) -> None:
        now = self._clock()
        if self._last is not None:
            remaining = self._last + self.interval - now
            if remaining > 0:
                self._sleep(remaining)
                now = self._last + self.interval
        self._last = now


_RETRY_DELAYS = (0.5, 1.0, 2.0)


class _HttpJson:
    """Shared GET-with-retries plumbing for the REST clients."""

    def __init__(self, session=None, rate: float = 5.0, sleep=time.sleep, clock=time.monotonic):
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._sleep = sleep
        self.limiter = RateLimiter(rate=rate, clock=clock, sleep=sleep)
        self.calls = 0

    def get_json(self, url: str, params: Optional[dict] = None) -> dict:
        last_error: Optional[Exception] = None
        for attempt, delay in enumerate((*_RETRY_DELAYS, None)):
            self.limiter.wait()
            self.calls += 1
            try:
                response = self._session.get(url, params=params, timeout=30)
            except Exception as exc:  # connection errors, timeouts
                last_error = exc
                if delay is None:
                    break
                self._sleep(delay)
                continue
            status = getattr(response, "status_code", 200)
            if status == 404:
                raise NotFound(url)
            if status >= 500:
                last_error = NetworkError(f"{url}: HTTP {status}")
                if delay is None:
                    break
                self._sleep(delay)
                continue
            if status >= 400:
                raise NetworkError(f"{url}: HTTP {status}")
            try:
                return response.json()
            except ValueError as exc:
                raise NetworkError(f"{url}: bad JSON payload: {exc}") from None
        raise NetworkError(f"{url}: retries exhausted: {last_error}")


class PubChemClient:
    """Compound lookups against the PubChem PUG REST service."""

    BASE = "https://pubchem.ncbi.nlm.nih.gov/rest/pug"

    def __init__(self, session=None, rate: float = 5.0, sleep=time.sleep, clock=time.monotonic):
        self._http = _HttpJson(session=session, rate=rate, sleep=sleep, clock=clock)

    @property
    def calls(self) -> int:
        return self._http.calls

    def cids_by_name(self, name: str) -> list[int]:
        if not name:
            raise ValueError("empty compound name")
        from urllib.parse import quote

        url = f"{self.BASE}/compound/name/{quote(name)}/cids/JSON"
        payload = self._http.get_json(url)
        cids = payload.get("IdentifierList", {}).get("CID", [])
        if not cids:
            raise NotFound(f"no CID for {name!r}")
        return [int(c) for c in cids]

    def smiles_by_cid(self, cid: int) -> str:
        if int(cid) <= 0:
            raise ValueError(f"cid must be positive, got {cid}")
        url = f"{self.BASE}/compound/cid/{int(cid)}/property/CanonicalSMILES/JSON"
        payload = self._http.get_json(url)
        try:
            properties = payload["PropertyTable"]["Properties"]
            smiles = str(properties[0]["CanonicalSMILES"])
        except (KeyError, IndexError) as exc:
            raise NetworkError(f"unexpected PubChem payload shape: {exc}") from None
        try:
            parse(smiles)
        except SmilesError as exc:
            raise ParseRejected(f"CID {cid}: {smiles!r}: {exc}") from None
        return smiles


class FdaNdcClient:
    """NDC-to-ingredient lookups against the openFDA drug directory."""

    BASE = "https://api.fda.gov/drug/ndc.json"

    def __init__(self, session=None, rate: float = 5.0, sleep=time.sleep, clock=time.monotonic):
        self._http = _HttpJson(session=session, rate=rate, sleep=sleep, clock=clock)

    @property
    def calls(self) -> int:
        return self._http.calls

    def ingredient_by_ndc(self, ndc11: str) -> str:
        hyphenated = f"{ndc11[:5]}-{ndc11[5:9]}-{ndc11[9:]}"
        for query in (
            f'packaging.package_ndc:"{hyphenated}"',
            f'product_ndc:"{ndc11[:5]}-{ndc11[5:9]}"',
        ):
            try:
                payload = self._http.get_json(self.BASE, params={"search": query, "limit": 1})
            except NotFound:
                continue
            results = payload.get("results", [])
            if results and results[0].get("generic_name"):
                return str(results[0]["generic_name"])
        raise NotFound(f"no FDA directory entry for NDC {ndc11}")


@dataclass
class ClientSet:
    """The pair of live services used by online resolution."""

    pubchem: PubChemClient
    fda: FdaNdcClient

    @classmethod
    def live(cls, rate: float = 5.0) -> "ClientSet":
        return cls(pubchem=PubChemClient(rate=rate), fda=FdaNdcClient(rate=rate))

    @property
    def calls(self) -> int:
        return self.pubchem.calls + self.fda.calls


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------


def _stages(query: DrugQuery) -> tuple[list[tuple[str, str, str]], list[str]]:
    """(stage name, cache kind, cache key) in fallback order, deduplicated.

    A malformed NDC only disables the NDC stage (noted in the second
    return value); the name stages still run.
    """
    stages = []
    notes = []
    seen = set()

    generic = normalize_name(query.generic_name) if query.generic_name else ""
    if generic:
        stages.append(("generic_name", "name", generic))
        seen.add(("name", generic))

    drug = normalize_name(query.drug_name) if query.drug_name else ""
    if drug and ("name", drug) not in seen:
        stages.append(("drug_name", "name", drug))
        seen.add(("name", drug))

    if query.ndc.strip():
        try:
            ndc = normalize_ndc(query.ndc)
        except InvalidNdc as exc:
            notes.append(str(exc))
        else:
            if ("ndc", ndc) not in seen:
                stages.append(("ndc", "ndc", ndc))

    return stages, notes


def _now() -> int:
    return int(time.time())


def resolve(
    query: DrugQuery,
    cache: ResolutionCache,
    clients: Optional[ClientSet] = None,
    offline: bool = False,
) -> ResolvedDrug | Unresolved:
    """Resolve one prescription row to a compound id and SMILES.

    The cache is always consulted first per stage; negative entries skip
    ahead to the next stage. On a cache miss in offline mode the stage
    simply fails. In live mode lookups hit the network and both outcomes
    are written back to the cache. SMILES that fail to parse are treated
    as misses (the offending stage is cached negative), and a malformed
    NDC disables only the NDC stage.

    Raises:
        NetworkError: when live lookups exhaust their retries.
    """
    stages, notes = _stages(query)
    if not stages:
        reason = "; ".join(notes) if notes else "nothing to look up"
        return Unresolved(query=query, reason=reason)

    for stage_name, kind, key in stages:
        hit = cache.get(kind, key)
        if hit is not None:
            if hit.resolved:
                return ResolvedDrug(
                    query=query, cid=int(hit.cid), smiles=hit.smiles,
                    resolution_path=stage_name,
                )
            continue
        if offline or clients is None:
            continue

        outcome = _resolve_live(kind, key, clients)
        if outcome is None:
            cache.put(CacheEntry(key=key, kind=kind, resolved=False, ts=_now()))
            continue
        cid, smiles = outcome
        cache.put(
            CacheEntry(key=key, kind=kind, resolved=True, cid=cid, smiles=smiles, ts=_now())
        )
        return ResolvedDrug(query=query, cid=cid, smiles=smiles, resolution_path=stage_name)

    reason = "all stages failed"
    if notes:
        reason += " (" + "; ".join(notes) + ")"
    return Unresolved(query=query, reason=reason)


def _resolve_live(kind: str, key: str, clients: ClientSet) -> Optional[tuple[int, str]]:
    """One live lookup; None means a clean miss (cacheable negative)."""
    try:
        if kind == "name":
            name = key
        else:
            ingredient = normalize_name(clients.fda.ingredient_by_ndc(key))
            if not ingredient:
                return None
            name = ingredient
        cid = clients.pubchem.cids_by_name(name)[0]
        smiles = clients.pubchem.smiles_by_cid(cid)
    except (NotFound, ParseRejected):
        # Unknown compound, or a structure the parser cannot represent:
        # either way the stage is a cacheable miss.
        return None
    return cid, smiles
