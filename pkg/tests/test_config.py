import pytest

from r3loc.config import PipelineConfig
from r3loc.errors import FormatError, InvalidArgument


def test_defaults():
    c = PipelineConfig()
    assert c.registration.inlier_threshold == 0.5
    assert c.registration.lowe_ratio == 0.95
    assert c.verification.superpixels == 250
    assert (c.verification.svc_c, c.verification.svc_gamma, c.verification.svc_coef0) == (1.0, 1.0, 1.0)
    assert PipelineConfig.load(None) == c


def test_load_overrides_and_comments(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# tuning\nregistration.max_iters = 500  # fewer\n\nfeatures.provider = file\n")
    c = PipelineConfig.load(p)
    assert c.registration.max_iters == 500 and c.features.provider == "file"
    assert c.registration.inlier_threshold == 0.5


def test_dump_round_trip(tmp_path):
    c = PipelineConfig.from_pairs({"retrieval.k": "3", "verification.top_k": "4"})
    (tmp_path / "c.txt").write_text(c.dump())
    assert PipelineConfig.load(tmp_path / "c.txt") == c


@pytest.mark.parametrize(
    "text, exc",
    [
        ("nope.key = 1\n", FormatError),
        ("registration.max_iters = many\n", FormatError),
        ("registration.max_iters\n", FormatError),
        ("retrieval.k = 1\nretrieval.k = 2\n", FormatError),
        ("verification.superpixels = 251\n", InvalidArgument),
        ("registration.confidence = 1\n", InvalidArgument),
        ("verification.feature_dim = 10\n", InvalidArgument),
        ("features.provider = magic\n", InvalidArgument),
    ],
)
def test_rejections(tmp_path, text, exc):
    p = tmp_path / "c.txt"
    p.write_text(text)
    with pytest.raises(exc):
        PipelineConfig.load(p)
