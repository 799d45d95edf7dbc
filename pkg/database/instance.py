from pathlib import Path

from interface.error import MissingUpstream
from interface.instance import InstanceManifest, InstanceSet, MilpInstance
from database.artifact import write_text
from utils.string import canonical_json

MANIFEST = "manifest.json"


def write_instance_set(directory: Path, instances: InstanceSet, manifest: InstanceManifest) -> None:
    """One JSON document per instance plus the split manifest."""
    for instance in instances.instances:
        write_text(directory / f"{instance.id}.json", canonical_json(instance) + "\n")
    write_text(directory / MANIFEST, canonical_json(manifest) + "\n")


def read_manifest(directory: Path) -> InstanceManifest:
    path = directory / MANIFEST
    if not path.exists():
        raise MissingUpstream(f"{path} does not exist; run gen first")
    return InstanceManifest.model_validate_json(path.read_text(encoding="utf-8"))


def read_instance(directory: Path, instance_id: str) -> MilpInstance:
    path = directory / f"{instance_id}.json"
    if not path.exists():
        raise MissingUpstream(f"{path} does not exist")
    return MilpInstance.model_validate_json(path.read_text(encoding="utf-8"))


def read_instance_set(directory: Path) -> tuple[InstanceSet, InstanceManifest]:
    manifest = read_manifest(directory)
    instances = [read_instance(directory, instance_id) for instance_id in manifest.ids]
    return (
        InstanceSet(split=manifest.split, instances=instances, master_seed=manifest.master_seed),
        manifest,
    )
