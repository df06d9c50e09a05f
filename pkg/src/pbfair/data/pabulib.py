"""Parser and serializer for the Pabulib flat file format.

The format is UTF-8 text with three section header lines ``META``,
``PROJECTS`` and ``VOTES``; rows are semicolon-delimited and the first row
after each section header names the columns.  META rows are key;value
pairs with required keys budget, vote_type, num_projects and num_votes.

Money is converted to integer minor units at two decimal places; values
with more precision are rejected rather than rounded, since silent
rounding would perturb cohesion thresholds.  Cumulative ballots are
normalized to exact per-ballot score vectors: points are divided by the
declared per-voter allowance (META ``max_sum_points``) when present,
otherwise by the ballot's own point total.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

from ..core import BallotKind, Instance, Profile, Project

REQUIRED_META = ("budget", "vote_type", "num_projects", "num_votes")
SUPPORTED_VOTE_TYPES = ("approval", "cumulative")
MINOR_SCALE = 100


class PabulibError(ValueError):
    """Any structural problem in a Pabulib file; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class PabulibWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class DatasetEntry:
    """A parsed instance/profile pair plus its verbatim metadata."""

    instance: Instance
    profile: Profile
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, DatasetEntry):
            return NotImplemented
        return (
            self.instance == other.instance
            and self.profile == other.profile
            and self.metadata == other.metadata
        )

    __hash__ = None

    @property
    def ballot_kind(self) -> BallotKind:
        return self.profile.kind

    @property
    def is_experimental(self) -> bool:
        flag = str(self.metadata.get("experimental", "")).strip().lower()
        return flag in ("1", "true", "yes")

    @property
    def country(self) -> str:
        return self.metadata.get("country", "").strip()


_MONEY_RE = re.compile(r"^\d+(\.\d{1,2})?$")


def parse_money(text: str, line: int) -> int:
    """Exact minor units from a decimal string with at most two decimal places."""
    text = text.strip()
    if not _MONEY_RE.match(text):
        raise PabulibError(f"bad money value {text!r} (need a non-negative amount, <= 2 decimals)", line)
    whole, _, frac = text.partition(".")
    return int(whole) * MINOR_SCALE + int(frac.ljust(2, "0") or 0)


def _parse_count(meta: dict, key: str, lines: dict) -> int:
    raw = meta[key].strip()
    if not raw.isdigit():
        raise PabulibError(f"{key} must be an integer, got {raw!r}", lines[key])
    return int(raw)


def _split_sections(text: str) -> dict:
    sections: dict[str, list[tuple[int, str]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip("﻿").rstrip("\r\n")
        if line.strip() in ("META", "PROJECTS", "VOTES"):
            current = line.strip()
            if current in sections:
                raise PabulibError(f"duplicate section {current}", lineno)
            sections[current] = []
            continue
        if current is None:
            if line.strip():
                raise PabulibError("content before the first section header", lineno)
            continue
        if line.strip():
            sections[current].append((lineno, line))
    for name in ("META", "PROJECTS", "VOTES"):
        if name not in sections:
            raise PabulibError(f"missing section {name}", 0)
    return sections


def _rows(section: list[tuple[int, str]], name: str) -> tuple[list[str], list[tuple[int, list[str]]]]:
    if not section:
        raise PabulibError(f"section {name} has no header row", 0)
    header_line, header = section[0]
    columns = [c.strip() for c in header.split(";")]
    rows = [(lineno, [c.strip() for c in line.split(";")]) for lineno, line in section[1:]]
    return columns, rows


def parse_pabulib(text: str) -> DatasetEntry:
    """Parse one Pabulib file into an exact in-memory entry."""
    sections = _split_sections(text)

    meta: dict[str, str] = {}
    meta_lines: dict[str, int] = {}
    _, meta_rows = _rows(sections["META"], "META")
    for lineno, cells in meta_rows:
        if len(cells) < 2:
            raise PabulibError(f"META row needs key;value, got {';'.join(cells)!r}", lineno)
        key = cells[0]
        meta[key] = cells[1]
        meta_lines[key] = lineno
    for key in REQUIRED_META:
        if key not in meta:
            raise PabulibError(f"missing required META key {key!r}", 0)

    vote_type = meta["vote_type"].strip().lower()
    if vote_type not in SUPPORTED_VOTE_TYPES:
        raise PabulibError(
            f"unsupported vote_type {vote_type!r} (supported: {', '.join(SUPPORTED_VOTE_TYPES)})",
            meta_lines["vote_type"],
        )
    budget = parse_money(meta["budget"], meta_lines["budget"])
    if budget <= 0:
        raise PabulibError("budget must be positive", meta_lines["budget"])
    declared_projects = _parse_count(meta, "num_projects", meta_lines)
    declared_votes = _parse_count(meta, "num_votes", meta_lines)

    columns, project_rows = _rows(sections["PROJECTS"], "PROJECTS")
    for required in ("project_id", "cost"):
        if required not in columns:
            raise PabulibError(f"PROJECTS is missing the {required!r} column", 0)
    extra = [c for c in columns if c not in ("project_id", "cost")]
    if extra:
        warnings.warn(f"ignoring extra PROJECTS columns: {', '.join(extra)}", PabulibWarning)
    id_col, cost_col = columns.index("project_id"), columns.index("cost")
    projects: list[Project] = []
    index_of: dict[str, int] = {}
    for lineno, cells in project_rows:
        if len(cells) <= max(id_col, cost_col):
            raise PabulibError("short PROJECTS row", lineno)
        pid = cells[id_col]
        if pid in index_of:
            raise PabulibError(f"duplicate project id {pid!r}", lineno)
        cost = parse_money(cells[cost_col], lineno)
        if cost <= 0:
            raise PabulibError(f"project {pid!r} has non-positive cost", lineno)
        index_of[pid] = len(projects)
        projects.append(Project(id=pid, index=len(projects), cost=cost))
    if len(projects) != declared_projects:
        raise PabulibError(
            f"num_projects declares {declared_projects} but PROJECTS has {len(projects)} rows",
            meta_lines["num_projects"],
        )

    columns, vote_rows = _rows(sections["VOTES"], "VOTES")
    needed = ("voter_id", "vote") + (("points",) if vote_type == "cumulative" else ())
    for required in needed:
        if required not in columns:
            raise PabulibError(f"VOTES is missing the {required!r} column", 0)
    extra = [c for c in columns if c not in ("voter_id", "vote", "points")]
    if extra:
        warnings.warn(f"ignoring extra VOTES columns: {', '.join(extra)}", PabulibWarning)
    vote_col = columns.index("vote")
    points_col = columns.index("points") if "points" in columns else None

    allowance = None
    if vote_type == "cumulative" and "max_sum_points" in meta:
        allowance = Fraction(meta["max_sum_points"].strip())

    approval_ballots: list[frozenset[int]] = []
    cardinal_ballots: list[tuple[Fraction, ...]] = []
    for lineno, cells in vote_rows:
        if len(cells) <= vote_col:
            raise PabulibError("short VOTES row", lineno)
        raw_vote = cells[vote_col].strip()
        ids = [tok.strip() for tok in raw_vote.split(",") if tok.strip()] if raw_vote else []
        for pid in ids:
            if pid not in index_of:
                raise PabulibError(f"vote references unknown project id {pid!r}", lineno)
        if vote_type == "approval":
            approval_ballots.append(frozenset(index_of[pid] for pid in ids))
            continue
        if points_col is None or len(cells) <= points_col:
            raise PabulibError("cumulative vote is missing points", lineno)
        raw_points = cells[points_col].strip()
        tokens = [tok.strip() for tok in raw_points.split(",") if tok.strip()] if raw_points else []
        if len(tokens) != len(ids):
            raise PabulibError(
                f"vote lists {len(ids)} projects but {len(tokens)} point values", lineno
            )
        try:
            points = [Fraction(tok) for tok in tokens]
        except (ValueError, ZeroDivisionError):
            raise PabulibError(f"bad points value in {raw_points!r}", lineno) from None
        if any(pt < 0 for pt in points):
            raise PabulibError("points must be non-negative", lineno)
        total = allowance if allowance is not None else sum(points, Fraction(0))
        scores = [Fraction(0)] * len(projects)
        if total > 0:
            for pid, pt in zip(ids, points):
                scores[index_of[pid]] += pt / total
        cardinal_ballots.append(tuple(scores))

    num_votes = len(approval_ballots) if vote_type == "approval" else len(cardinal_ballots)
    if num_votes != declared_votes:
        raise PabulibError(
            f"num_votes declares {declared_votes} but VOTES has {num_votes} rows",
            meta_lines["num_votes"],
        )
    if num_votes == 0:
        raise PabulibError("file contains no votes", meta_lines["num_votes"])

    instance = Instance(projects=tuple(projects), budget=budget)
    if vote_type == "approval":
        profile = Profile(kind=BallotKind.APPROVAL, approval=tuple(approval_ballots),
                          num_projects=len(projects))
    else:
        profile = Profile(kind=BallotKind.CARDINAL, cardinal=tuple(cardinal_ballots),
                          num_projects=len(projects))
    return DatasetEntry(instance=instance, profile=profile, metadata=dict(meta))


def parse_pabulib_file(path) -> DatasetEntry:
    with open(path, encoding="utf-8") as fh:
        return parse_pabulib(fh.read())


def format_money(minor: int) -> str:
    whole, cents = divmod(minor, MINOR_SCALE)
    if cents == 0:
        return str(whole)
    return f"{whole}.{cents:02d}"


def serialize_pabulib(entry: DatasetEntry) -> str:
    """Flat-format text whose re-parse equals the entry (modulo META key order)."""
    lines = ["META", "key;value"]
    meta = dict(entry.metadata)
    meta["budget"] = format_money(entry.instance.budget)
    meta["num_projects"] = str(entry.instance.num_projects)
    meta["num_votes"] = str(entry.profile.num_ballots)
    for key, value in meta.items():
        lines.append(f"{key};{value}")
    lines += ["PROJECTS", "project_id;cost"]
    for p in entry.instance.projects:
        lines.append(f"{p.id};{format_money(p.cost)}")
    if entry.profile.kind is BallotKind.APPROVAL:
        lines += ["VOTES", "voter_id;vote"]
        for i, ballot in enumerate(entry.profile.approval):
            ids = ",".join(entry.instance.projects[p].id for p in sorted(ballot))
            lines.append(f"{i + 1};{ids}")
    else:
        lines += ["VOTES", "voter_id;vote;points"]
        allowance = Fraction(meta["max_sum_points"]) if "max_sum_points" in meta else None
        for i, ballot in enumerate(entry.profile.cardinal):
            voted = [p for p, s in enumerate(ballot) if s > 0]
            ids = ",".join(entry.instance.projects[p].id for p in voted)
            # written at the original scale when the allowance is declared,
            # otherwise as exact fractions of the ballot total
            points = ",".join(
                str(ballot[p] * allowance if allowance is not None else ballot[p]) for p in voted
            )
            lines.append(f"{i + 1};{ids};{points}")
    return "\n".join(lines) + "\n"
