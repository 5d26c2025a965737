import os

import pytest

from parcelpop import toycity
from parcelpop.pipeline import RunContext, run_pipeline


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """Generated toy-city fixture directory (seed 42)."""
    d = tmp_path_factory.mktemp("toycity")
    toycity.generate(str(d), seed=42)
    return str(d)


@pytest.fixture(scope="session")
def toy_config(toy_dir):
    from parcelpop.config import load_config

    return load_config(os.path.join(toy_dir, "config.json"))


@pytest.fixture(scope="session")
def toy_run(toy_config, tmp_path_factory):
    """One full pipeline run over the toy city, shared across tests."""
    out = tmp_path_factory.mktemp("toyrun")
    ctx = RunContext(cfg=toy_config, out_dir=str(out), threads=1)
    manifest = run_pipeline(ctx)
    return {"ctx": ctx, "out_dir": str(out), "manifest": manifest}
