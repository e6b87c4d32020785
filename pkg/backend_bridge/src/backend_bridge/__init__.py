"""Score server speaking the NDJSON wire protocol.

``serve_echo`` runs a weightless test double; ``serve`` wraps a
pretrained latent-diffusion denoiser (optional ``model`` extra).
"""

from .conversion import ScheduleTable, eps_to_score
from .protocol import PROTO_VERSION, decode_f32, dump_frame, encode_f32
from .server import ScoreServer, SessionConfig, serve, serve_echo

__version__ = "0.1.0"
