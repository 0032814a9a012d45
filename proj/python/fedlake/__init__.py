"""Python access to the fedlake federated analytics core.

Results are returned as plain dicts and lists decoded from the JSON the
core produces, so they match the gateway response bodies.
"""

import json as _json

from . import _fedlake
from ._fedlake import Error

__all__ = [
    "Error",
    "Federation",
    "default_cohort_spec",
    "fedavg",
    "gateway_shapes",
    "generate_cohort",
    "parse_query",
    "patterns",
]


def _dump(value):
    if value is None:
        return ""
    return value if isinstance(value, str) else _json.dumps(value)


def default_cohort_spec():
    """The built-in three-hospital cohort spec."""
    return _json.loads(_fedlake.default_cohort_spec())


def generate_cohort(out_dir, spec=None):
    """Writes node CSVs, mappings, catalog.json and manifest.json; returns the manifest."""
    spec = default_cohort_spec() if spec is None else spec
    return _json.loads(_fedlake.generate_cohort(_dump(spec), str(out_dir)))


def parse_query(text, schema):
    """Parsed query as a dict, with its canonical text under "canonical"."""
    return _json.loads(_fedlake.parse_query(text, _dump(schema)))


def fedavg(updates, mode="sample_weighted"):
    """Averages [(params, n_train), ...]."""
    return _fedlake.fedavg([(list(p), int(n)) for p, n in updates], mode)


def patterns():
    return _json.loads(_fedlake.patterns())["patterns"]


def gateway_shapes():
    """JSON Schemas of the gateway responses keyed by "METHOD /path"."""
    return _json.loads(_fedlake.gateway_shapes())


class Federation:
    """A coordinator over in-process or remote data nodes."""

    def __init__(self, core):
        self._core = core

    @classmethod
    def from_spec(cls, spec=None):
        """Generates a cohort in memory and serves it in-process."""
        spec = default_cohort_spec() if spec is None else spec
        return cls(_fedlake.Federation.from_spec(_dump(spec)))

    @classmethod
    def from_dir(cls, data_dir):
        """Serves a generated cohort directory in-process."""
        return cls(_fedlake.Federation.from_dir(str(data_dir)))

    @classmethod
    def from_catalog(cls, catalog, node_token, timeout_ms=30000):
        """Talks to the node APIs listed in a catalog file."""
        return cls(_fedlake.Federation.from_catalog(str(catalog), node_token, timeout_ms))

    @property
    def node_ids(self):
        return list(self._core.node_ids())

    def schema(self):
        return _json.loads(self._core.schema())

    def query(self, text):
        return _json.loads(self._core.query(text))

    def train(self, pattern, train_config=None, federation=None, **overrides):
        """Runs federated training. Keyword overrides go into train_config."""
        config = dict(train_config or {})
        config.update(overrides)
        return _json.loads(self._core.train(pattern, _dump(config), _dump(federation)))

    def metrics(self, pattern):
        return _json.loads(self._core.metrics(pattern))

    def model(self, pattern):
        return _json.loads(self._core.model(pattern))

    def load_model(self, model):
        self._core.load_model(_dump(model))
