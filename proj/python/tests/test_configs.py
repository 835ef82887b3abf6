import json
import pathlib
import jsonschema
import pytest

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

CONFIGS = pathlib.Path(__file__).resolve().parents[2] / "configs"
SCHEMA = json.loads((CONFIGS / "schema.json").read_text())


def load(path):
    with open(path, "rb") as f:
        return tomllib.load(f)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.name)
def test_run_configs_match_schema(path):
    jsonschema.validate(load(path), SCHEMA)


@pytest.mark.parametrize("path", sorted((CONFIGS / "problems").glob("*.toml")), ids=lambda p: p.name)
def test_problem_files_match_schema(path):
    problem = {**SCHEMA["$defs"]["problem"], "$defs": SCHEMA["$defs"]}
    jsonschema.validate(load(path), problem)


def test_schema_rejects_unknown_fields():
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"problem": "p.toml", "grid": {"steps": 4}}, SCHEMA)
