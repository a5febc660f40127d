import pytest

from mstm.config import coerce, parse_text
from mstm.errors import ConfigError

SCHEMA = {"epochs": int, "lr": float, "kind": str, "porosity_range": "range", "verbose": bool}


def test_parse_and_coerce():
    text = "# comment\nepochs = 3\n\nlr = 1e-3  # inline\nkind = lattice\nporosity_range = 0.1, 0.8\nverbose = yes\n"
    values = coerce(parse_text(text), SCHEMA)
    assert values == {"epochs": 3, "lr": 1e-3, "kind": "lattice", "porosity_range": (0.1, 0.8), "verbose": True}


@pytest.mark.parametrize(
    "text",
    ["epochs 3", "= 3", "epochs = 3\nepochs = 4", "epohcs = 3", "epochs = three", "porosity_range = 0.8, 0.1"],
)
def test_bad_configs_are_hard_errors(text):
    with pytest.raises(ConfigError):
        coerce(parse_text(text), SCHEMA)
