import pytest

from monoview.config import toy_config


def tiny_config(**overrides):
    """A toy run small enough for unit tests (16x16 scene, 8x8 patches, small networks)."""
    base = {
        "patch_size": [8, 8],
        "scene_options": {"resolution": 16, "n_test": 3},
        "schedule": {"total_iterations": 20, "stride_init": 2, "stride_step": 1, "stride_interval": 10,
                     "lr_half_interval": 10},
        "field": {"depth": 2, "width": 32, "skips": [], "pos_freqs": 4, "dir_freqs": 2},
        "render": {"n_coarse": 16, "n_fine": 0},
        "discriminator": {"base_channels": 8, "n_layers": 3},
        "extractor": {"kind": "random-conv", "seed": 0, "input_size": 32},
        "log_every": 0,
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = {**base[key], **value}
        else:
            base[key] = value
    return toy_config(**base)


@pytest.fixture
def tiny():
    return tiny_config


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[number])
