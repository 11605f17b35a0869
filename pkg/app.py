import logging

from flask import Flask
from werkzeug.middleware.proxy_fix import ProxyFix

from checkpoint import load_checkpoint
from config import SERVE_CHECKPOINT
from errors import CheckpointError
from fpbilstm import summarize

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def create_app(checkpoint_path=None):
    """Flask app serving read-only inference over one frozen checkpoint.

    With no argument the checkpoint comes from FPBILSTM_CHECKPOINT, so
    `gunicorn "app:create_app()"` works unchanged.
    """
    checkpoint_path = checkpoint_path or SERVE_CHECKPOINT
    if not checkpoint_path:
        raise CheckpointError("No checkpoint given; pass one or set FPBILSTM_CHECKPOINT")
    checkpoint = load_checkpoint(checkpoint_path)

    app = Flask(__name__)
    app.wsgi_app = ProxyFix(app.wsgi_app, x_proto=1, x_host=1)
    app.config["CHECKPOINT_PATH"] = checkpoint_path
    app.extensions["fpbilstm"] = {
        "checkpoint": checkpoint,
        "model": checkpoint.build_model(),
        "summary": summarize(checkpoint.model_config,
                             int(round(checkpoint.window_s * checkpoint.target_hz))),
    }

    from routes import api_bp
    app.register_blueprint(api_bp)
    logger.info(f"Loaded checkpoint {checkpoint_path} for inference")
    return app
