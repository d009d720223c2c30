from pathlib import Path

import pytest

from diif.decoder import load_weights
from diif.pipeline import make_synthetic_corpus

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    make_synthetic_corpus(d, count=8, size=96, seed=0)
    return d


@pytest.fixture(scope="session")
def quality_weights():
    """Longer-trained weights for the near-identity reconstruction checks.

    Regenerate with scripts/train_quality_fixture.py; training this inside
    the suite would dominate its runtime.
    """
    path = FIXTURES / "quality_weights.bin"
    if not path.exists():
        pytest.fail(f"missing fixture {path}; run scripts/train_quality_fixture.py")
    return load_weights(path)
