import numpy as np
import pytest

from clipedit.corpus import FeatureStore, SynthConfig, VideoRecord, synth_corpus


class StubRng:
    """Stands in for numpy's Generator where a test needs scripted draws."""

    def __init__(self, draws):
        self.draws = list(draws)

    def uniform(self, lo, hi):
        return self.draws.pop(0)


@pytest.fixture
def stub_rng_factory():
    return StubRng


def make_store(rows_by_video: dict[str, np.ndarray], captions: dict[str, np.ndarray] | None = None) -> FeatureStore:
    store = FeatureStore()
    for vid, rows in rows_by_video.items():
        rows = np.asarray(rows, dtype=np.float32)
        store.videos[vid] = VideoRecord(vid, float(rows.shape[0]), rows)
    for cid, vec in (captions or {}).items():
        store.caption_features[cid] = np.asarray(vec, dtype=np.float32)
    return store


@pytest.fixture
def tiny_store():
    # 8 one-second rows of dimension 3; rows are easy to pool by hand
    rows = np.stack([np.full(3, float(i)) for i in range(8)])
    return make_store({"v1": rows}, {"c1": np.array([1.0, 0.0, 0.0])})


@pytest.fixture(scope="session")
def zero_noise_corpus():
    cfg = SynthConfig(
        n_train_videos=6, n_test_videos=3, captions_per_video=3,
        video_len_s=40.0, gt_len_range=(5.0, 8.0), dim=16,
        noise_sigma=0.0, caption_noise_sigma=0.0,
        align_gt_to_seconds=True, seed=7,
    )
    return synth_corpus(cfg)
