import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from r3loc import cli


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@dataclass(frozen=True)
class Scenario:
    root: Path
    db: Path
    svc: Path
    build_seconds: float

    @property
    def calib(self) -> Path:
        return self.root / "camera.calib"

    @property
    def config(self) -> Path:
        return self.root / "config.txt"

    def query_lines(self) -> list[str]:
        return (self.root / "queries.txt").read_text().splitlines()


@pytest.fixture(scope="session")
def scenario(tmp_path_factory) -> Scenario:
    """The 20-place wake-up scenario, with database and classifier built through the CLI."""
    root = tmp_path_factory.mktemp("scenario")
    start = time.perf_counter()
    assert cli.main(["synth", "--out", str(root), "--seed", "0"]) == 0
    db, svc = root / "db", root / "model.svc"
    assert cli.main(["build-db", "--input", str(root / "map"), "--db", str(db), "--config", str(root / "config.txt")]) == 0
    assert cli.main(["train-svc", "--features", str(root / "train.csv"), "--out", str(svc)]) == 0
    return Scenario(root, db, svc, time.perf_counter() - start)
