from .grammar import ParsedCaption, RolePattern, SceneGrammar, Template, default_grammar
from .generate import fill_missing_regions, generate_dataset, generate_sample
from .io import DatasetFile, read_dataset, write_dataset
from .types import Proposal, ProposalSet, SceneSample, check_sample

__all__ = [
    "ParsedCaption", "RolePattern", "SceneGrammar", "Template", "default_grammar",
    "fill_missing_regions", "generate_dataset", "generate_sample",
    "DatasetFile", "read_dataset", "write_dataset",
    "Proposal", "ProposalSet", "SceneSample", "check_sample",
]
