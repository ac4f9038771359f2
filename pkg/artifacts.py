"""Storing JSON artifacts of the toolkit."""
from __future__ import annotations
import json
import logging
from pathlib import Path
import jsonschema
from fleet_utility import SchemaError

SCHEMA_DIR = Path(__file__).resolve().parent

# artifact kind -> schema filename
SCHEMAS = {
    'cleaning-report': 'cleaning-report-schema.json',
    'stations': 'stations-schema.json',
    'fleet': 'fleet-schema.json',
    'allocation': 'allocation-schema.json',
    'rebalancing': 'allocation-schema.json',
    'evaluation': 'evaluation-schema.json',
    'scenario': 'scenario-schema.json',
    'resolved-config': 'resolved-config-schema.json',
    'stats': 'stats-schema.json',
}


class Artifact(dict):
    """A JSON document produced by one of the commands.

    The `kind` key names the schema the document follows.
    """

    def __init__(self, kind: str, **content):
        super().__init__()
        if kind not in SCHEMAS:
            raise UnknownArtifact(f'Artifact kind \'{kind}\' is not supported.')
        self['kind'] = kind
        self.update(content)

    def __str__(self) -> str:
        txt = f'Artifact (with schema: {self.schema_filename()}):\n'
        txt += self.dumps()
        return txt

    def schema_filename(self) -> Path:
        """Return the path of the schema this artifact follows."""
        return SCHEMA_DIR / SCHEMAS[self['kind']]

    def dumps(self) -> str:
        """Serialize deterministically."""
        return json.dumps(self, sort_keys=True, indent=4)

    def save(self, filename) -> None:
        """Save the artifact to a JSON file."""
        with open(filename, 'w', encoding='utf-8') as file_out:
            file_out.write(self.dumps())
            file_out.write('\n')
        if __debug__:
            logging.debug('Saved %s artifact to %s', self['kind'], filename)

    def is_valid(self) -> bool:
        """Test whether the artifact follows its JSON schema."""
        with open(self.schema_filename(), 'r', encoding='utf-8') as file_in:
            schema = json.loads(file_in.read())
        try:
            jsonschema.validate(self, schema)
            return True
        except jsonschema.ValidationError as err:
            logging.warning('ValidationError:\n%s', err)
            return False

    @staticmethod
    def from_file(filename) -> Artifact:
        """Make an artifact object from a JSON file."""
        with open(filename, 'r', encoding='utf-8',
                  errors='replace') as file_in:
            try:
                content = json.loads(file_in.read())
            except json.JSONDecodeError as err:
                raise SchemaError(f'{filename} is not JSON: {err}') from err
        if not isinstance(content, dict):
            raise SchemaError(f'{filename} does not hold a JSON object.')
        kind = content.pop('kind', None)
        if kind is None:
            raise UnknownArtifact(f'{filename} has no artifact kind.')
        return Artifact(kind, **content)


class UnknownArtifact(SchemaError):
    """Raised for documents without a supported kind."""
