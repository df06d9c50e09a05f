"""Dataset filters, train/test splits, and the on-disk group cache."""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path

from ..cohesion import GroupIndex, groups_from_project_sets, has_cohesive_group, mine_cohesive_groups
from ..core import BallotKind
from .pabulib import DatasetEntry, serialize_pabulib

MIN_PROJECTS = 3
MAX_PROJECTS = 25
SMALL_THRESHOLD = 1000

_US_NAMES = frozenset({"us", "usa", "united states", "united states of america"})


class Role(Enum):
    TRAIN = "train"
    TEST_ID = "test_id"
    TEST_OOD = "test_ood"
    UNSPLIT = "unsplit"


@dataclass(frozen=True)
class SplitSpec:
    """One row of the split table: ballot kind, size class, optional country filter."""

    kind: BallotKind
    small: bool
    role: Role
    countries: frozenset[str] | None = None
    exclude_countries: frozenset[str] | None = None
    threshold: int = SMALL_THRESHOLD

    def matches(self, entry: DatasetEntry) -> bool:
        if entry.profile.kind is not self.kind:
            return False
        if (entry.profile.num_ballots < self.threshold) != self.small:
            return False
        country = entry.country.strip().lower()
        if self.countries is not None and country not in self.countries:
            return False
        if self.exclude_countries is not None and country in self.exclude_countries:
            return False
        return True


def default_splits() -> tuple[SplitSpec, ...]:
    """Cardinal: small trains, large is OOD.  Approval: small US trains,
    small elsewhere is the ID test set, large is OOD."""
    return (
        SplitSpec(BallotKind.CARDINAL, small=True, role=Role.TRAIN),
        SplitSpec(BallotKind.CARDINAL, small=False, role=Role.TEST_OOD),
        SplitSpec(BallotKind.APPROVAL, small=True, role=Role.TRAIN, countries=_US_NAMES),
        SplitSpec(BallotKind.APPROVAL, small=True, role=Role.TEST_ID, exclude_countries=_US_NAMES),
        SplitSpec(BallotKind.APPROVAL, small=False, role=Role.TEST_OOD),
    )


def assign_split(entry: DatasetEntry, splits=None) -> Role:
    for spec in splits if splits is not None else default_splits():
        if spec.matches(entry):
            return spec.role
    return Role.UNSPLIT


def rejection_reasons(entry: DatasetEntry) -> list[str]:
    """Why the filter would drop this entry; empty when it is kept."""
    reasons = []
    m = entry.instance.num_projects
    if not MIN_PROJECTS <= m <= MAX_PROJECTS:
        reasons.append(f"project count {m} outside [{MIN_PROJECTS}, {MAX_PROJECTS}]")
    if entry.instance.is_fully_funded():
        reasons.append("fully funded (total project cost within budget)")
    if entry.is_experimental:
        reasons.append("experimental")
    unsupported = entry.profile.unsupported_projects()
    if unsupported:
        ids = ", ".join(entry.instance.projects[p].id for p in unsupported)
        reasons.append(f"unsupported projects: {ids}")
    elif not has_cohesive_group(entry.instance, entry.profile):
        reasons.append("no cohesive group")
    return reasons


def filter_dataset(entries) -> list[DatasetEntry]:
    """Keep entries with 3..25 projects, underfunded, non-experimental,
    fully supported, and at least one cohesive group."""
    return [e for e in entries if not rejection_reasons(e)]


def filter_report(entries) -> list[tuple[DatasetEntry, list[str]]]:
    return [(e, rejection_reasons(e)) for e in entries]


# ---------------------------------------------------------------------------
# Group cache
# ---------------------------------------------------------------------------

GROUP_CACHE_COLUMNS = ["projects", "support", "gamma", "tiebreak", "member_count", "alpha_floor"]
MANIFEST_COLUMNS = ["path", "sha256", "split", "ballot_kind", "n", "m", "budget", "groups_file"]


def content_hash(entry: DatasetEntry) -> str:
    """Stable key for cached artifacts: hash of the canonical serialization."""
    return hashlib.sha256(serialize_pabulib(entry).encode("utf-8")).hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class GroupCache:
    """Per-instance cohesive-group files keyed by content hash, with a CSV manifest.

    The cache stores which project sets form groups; members, support and
    ordering keys are recomputed from the profile on load, which is cheap
    compared to the mining enumeration itself.
    """

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)

    def groups_path(self, digest: str) -> Path:
        return self.root / f"{digest}.groups.csv"

    def save(self, entry: DatasetEntry, index: GroupIndex, digest: str | None = None) -> Path:
        digest = digest or content_hash(entry)
        path = self.groups_path(digest)
        rows = []
        for g in index.groups:
            rows.append({
                "projects": ",".join(entry.instance.projects[p].id for p in g.projects),
                "support": str(g.support),
                "gamma": str(g.gamma),
                "tiebreak": str(g.tiebreak),
                "member_count": str(len(g.members)),
                "alpha_floor": ",".join(str(a) for a in g.alpha_floor),
            })
        import io

        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=GROUP_CACHE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
        _atomic_write(path, buffer.getvalue())
        return path

    def load(self, entry: DatasetEntry, digest: str | None = None) -> GroupIndex | None:
        digest = digest or content_hash(entry)
        path = self.groups_path(digest)
        if not path.exists():
            return None
        index_of = {p.id: p.index for p in entry.instance.projects}
        project_sets = []
        checks = []
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                for row in csv.DictReader(fh):
                    ids = [tok for tok in row["projects"].split(",") if tok]
                    project_sets.append(tuple(sorted(index_of[pid] for pid in ids)))
                    checks.append((int(row["member_count"]), Fraction(row["support"])))
        except (KeyError, ValueError, ZeroDivisionError, csv.Error):
            return None  # malformed cache file; force a re-mine
        index = groups_from_project_sets(entry.instance, entry.profile, project_sets)
        by_projects = {g.projects: g for g in index.groups}
        for projects, (count, support) in zip(project_sets, checks):
            g = by_projects.get(projects)
            if g is None or len(g.members) != count or g.support != support:
                return None  # stale cache; force a re-mine
        return index

    def get_or_mine(self, entry: DatasetEntry, digest: str | None = None) -> tuple[GroupIndex, bool]:
        """(group index, cache-hit flag); mines and stores on miss."""
        digest = digest or content_hash(entry)
        cached = self.load(entry, digest)
        if cached is not None:
            return cached, True
        index = mine_cohesive_groups(entry.instance, entry.profile)
        self.save(entry, index, digest)
        return index, False

    def write_manifest(self, rows: list[dict]) -> Path:
        path = self.root / "manifest.csv"
        import io

        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=MANIFEST_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
        _atomic_write(path, buffer.getvalue())
        return path

    def read_manifest(self) -> list[dict]:
        path = self.root / "manifest.csv"
        if not path.exists():
            return []
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
