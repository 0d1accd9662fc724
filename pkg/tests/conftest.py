import numpy as np
import pytest

from pgprune.arch import ArchConfig
from pgprune.masking import GranularityMap
from pgprune.model import teacher_sample, toy_checkpoint

TINY = ArchConfig(vocab_size=48, d_model=16, n_layers=2, n_heads=2, d_ff=24, max_seq_len=16)


@pytest.fixture(scope="session")
def tiny_arch():
    return TINY


@pytest.fixture(scope="session")
def tiny_ckpt():
    return toy_checkpoint(TINY, seed=3)


@pytest.fixture(scope="session")
def tiny_gmap():
    return GranularityMap.from_arch(TINY, ("head", "mlp_channel"))


@pytest.fixture(scope="session")
def tiny_corpus(tiny_ckpt):
    return teacher_sample(tiny_ckpt, seed=5, n_segments=24, seq_len=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; shown in the summary."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
