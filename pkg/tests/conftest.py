from __future__ import annotations

from pathlib import Path

import pytest

from detpoison.dataset import materialize_rasters, save_dataset
from detpoison.synthetic import SyntheticConfig, generate_synthetic_dataset


def small_config(n_images: int = 12, seed: int = 0, **overrides) -> SyntheticConfig:
    fields = dict(
        n_images=n_images,
        width=96,
        height=96,
        n_classes=6,
        min_objects=1,
        max_objects=3,
        seed=seed,
    )
    fields.update(overrides)
    return SyntheticConfig(**fields)


def write_dataset(root: Path, cfg: SyntheticConfig, role: str = "test_benign") -> Path:
    manifest = generate_synthetic_dataset(cfg, role=role)
    manifest = materialize_rasters(manifest, root)
    save_dataset(manifest, root / "manifest.jsonl", "manifest")
    return root / "manifest.jsonl"


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory) -> Path:
    """A materialized 12-image synthetic test split shared across tests."""
    root = tmp_path_factory.mktemp("scenes")
    write_dataset(root, small_config())
    return root


@pytest.fixture()
def scene_manifest(scene_dir):
    from detpoison.dataset import load_dataset

    return load_dataset(scene_dir / "manifest.jsonl", "manifest")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One verdict line per numbered acceptance criterion."""
    rows: dict[str, str] = {}
    for outcome, label in (
        ("failed", "FAIL"),
        ("error", "FAIL"),
        ("skipped", "SKIP"),
        ("passed", "PASS"),
    ):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            if outcome == "passed" and getattr(rep, "when", "call") != "call":
                continue
            rows.setdefault(nodeid.split("::")[-1], label)
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(rows):
            terminalreporter.write_line(f"{rows[name]}  {name}")
