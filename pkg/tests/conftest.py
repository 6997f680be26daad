import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from clinpseudo.pipeline import training_pairs  # noqa: E402
from clinpseudo.surrogates import CohortKey  # noqa: E402
from clinpseudo.synth import GeneratorConfig, generate  # noqa: E402
from clinpseudo.tagger import train_tagger  # noqa: E402


@pytest.fixture(scope="session")
def small_bundle():
    return generate(GeneratorConfig(seed=11, doc_count=120))


@pytest.fixture(scope="session")
def trained_model(small_bundle):
    return train_tagger(training_pairs(small_bundle.items()[:100]), epochs=3, seed=0)


@pytest.fixture
def key():
    return CohortKey.from_hex("cohort-a", "11" * 32)


@pytest.fixture
def other_key():
    return CohortKey.from_hex("cohort-b", "22" * 32)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
