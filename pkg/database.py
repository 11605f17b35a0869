import logging
import os

from flask import Flask
from flask_sqlalchemy import SQLAlchemy
from sqlalchemy.orm import DeclarativeBase

logger = logging.getLogger(__name__)


class Base(DeclarativeBase):
    pass


db = SQLAlchemy(model_class=Base)


def resolve_database_url(url, output_dir):
    """Configured URL, or a sqlite file inside the output directory."""
    if not url:
        os.makedirs(output_dir, exist_ok=True)
        return f"sqlite:///{os.path.abspath(os.path.join(output_dir, 'results.db'))}"
    # Heroku-style URLs
    if url.startswith("postgres://"):
        url = url.replace("postgres://", "postgresql://", 1)
    return url


def create_db_app(url):
    """A bare Flask app carrying the database binding, with tables created."""
    app = Flask(__name__)
    app.config["SQLALCHEMY_DATABASE_URI"] = url
    app.config["SQLALCHEMY_TRACK_MODIFICATIONS"] = False
    if not url.startswith("sqlite"):
        app.config["SQLALCHEMY_ENGINE_OPTIONS"] = {"pool_recycle": 300, "pool_pre_ping": True}
    db.init_app(app)
    with app.app_context():
        import models  # noqa: F401
        db.create_all()
    logger.debug(f"Database ready at {url}")
    return app
