"""Scene-consistent shot-representation pretraining and scene-segmentation
evaluation on synthetic long-video corpora."""

from .augment import AugmentConfig, ClipStream, aug_key, aug_query, clip_shuffle
from .corpus import (Corpus, CorpusFormatError, ShotFeature, SynthesisConfig,
                     Video, generate_corpus, load_corpus, save_corpus,
                     split_corpus)
from .downstream import (BiLstmHeadConfig, MlpHeadConfig, bilstm_infer,
                         embed_corpus, predict_boundaries, train_bilstm_head,
                         train_mlp_head)
from .encoder import EncoderConfig, Mlp, SgdMomentum, momentum_update
from .metrics import (EvalReport, average_precision, evaluate, f1_score,
                      mean_ap, retrieve_top_k)
from .pretrain import (MemoryQueue, SslConfig, derive_seed, info_nce,
                       negative_free_loss, pretrain, train_step)
from .selection import (ClusterModel, NearestNeighbor, RandomNearby,
                        SceneConsistency, SelfAugmented, SoftSceneConsistency,
                        kmeans, map_nn, map_rs, map_sa, map_sc, soft_positive)

__version__ = "0.1.0"
