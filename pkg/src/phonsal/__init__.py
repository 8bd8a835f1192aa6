"""phonsal: perturbation-based saliency analysis of ASR models against
phonetic acoustic cues (formants, frication peaks, plosive bursts)."""

from .acoustics import (
    FormantMeasurementError, FormantSet, PeakMeasurement,
    burst_peak, estimate_formants, fricative_peak,
)
from .alignment import (
    AnnotatedSpan, PhoneOccurrence, UtteranceRecord,
    check_error_free, extract_occurrences, gender_from_speaker, parse_phn, parse_wrd,
    span_to_frames, walk_corpus, wer, words_from_tokens,
)
from .attribution import (
    BinaryMap, MaskDiversityError, MaskPlan, SaliencyMap, SegmentMap,
    aggregate_word, attribute_token, binarize_topk, explain_utterance,
    normalize, segment_by_energy,
)
from .audio import load_audio, read_sphere, read_wav, write_sphere, write_wav
from .backend import (
    Backend, BackendError, EnergyOracleBackend, HttpBackend, ProcessBackend,
    ProtocolError, ScoreRequest, ScriptedCorpusBackend, Token, TokenSequence,
    TransportError, make_energy_oracle,
)
from .features import (
    FrameParams, MelSpectrogram, Waveform,
    cmvn, compute_logmel, hz_to_bin, hz_to_mel, mel_bin_centers, mel_to_hz,
)
from .metrics import (
    BoxplotStats, OccurrenceMeasurement, SpectralMatchTable,
    boxplot_stats, frequency_distribution, spectral_match, time_coverage,
    word_reference_coverage,
)
from .report import PipelineError, RunConfig, RunSummary, dump_saliency, run_pipeline

__version__ = "0.1.0"
