"""ECD peak prediction from 3D molecular graphs."""

from .checkpoint import Checkpoint
from .chemio import (DatasetEntry, DatasetError, MoleculeRecord, ParseError, parse_molblock,
                     parse_smiles, read_dataset, write_dataset, write_molblock, write_smiles)
from .estimator import (ECDFormerRegressor, MoleculeFeaturizer, PeakExtractor,
                        SpectrumRenderer)
from .metrics import EvalReport, evaluate
from .model import ECDFormer, ModelConfig
from .molgraph import build_graphs, embed_coordinates, featurize
from .peakformer import decode, peak_loss
from .spectra import (GRID, Peak, PeakSet, SpectrumError, extract_peaks, render,
                      synthesize_from_states)
from .synthetic import synthetic_dataset
from .training import TrainConfig, evaluate_checkpoint, split_dataset, train

__version__ = "0.1.0"
