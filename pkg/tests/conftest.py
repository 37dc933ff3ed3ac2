import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from darec.config import from_dict  # noqa: E402


def tiny_config_dict(tmp_path=None, **over):
    d = {
        "profile": "toy",
        "kind": "voxel",
        "dataset": {"n_rendered": 20, "n_natural": 20, "image_size": 16, "n_points": 300,
                    "test_fraction": 0.25},
        "prior": {"latent_dim": 8, "conv_widths": [4, 4, 4, 4]},
        "encoder": {"image_size": 16, "widths": [4, 8]},
        "disc_width": 8,
        "stage1": {"epochs": 3, "batch_size": 8, "checkpoint_every": 1, "min_epochs": 100},
        "stage2": {"steps": 6, "batch_size": 4, "eval_every": 3, "log_every": 2},
        "eval": {"n_points": 200},
        "ablation": {"seeds": [0, 1]},
    }
    if tmp_path is not None:
        d["out_dir"] = str(tmp_path)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k] = {**d[k], **v}
        else:
            d[k] = v
    return d


def tiny_config(tmp_path=None, **over):
    return from_dict(tiny_config_dict(tmp_path, **over))


@pytest.fixture(scope="session")
def tiny_data():
    from darec.trainer import load_data

    return load_data(tiny_config())


@pytest.fixture(scope="session")
def tiny_prior_ckpt(tmp_path_factory, tiny_data):
    from darec.trainer import run_stage1

    out = tmp_path_factory.mktemp("prior")
    return run_stage1(tiny_config(out), out, data=tiny_data)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_data, tiny_prior_ckpt):
    from darec.trainer import run_stage2

    out = tmp_path_factory.mktemp("recon")
    rec = run_stage2(tiny_config(out), tiny_prior_ckpt, out, data=tiny_data)
    return out, rec
