import json
from datetime import datetime

from database import db


class CacheEntry(db.Model):
    id = db.Column(db.Integer, primary_key=True)
    key = db.Column(db.String(64), unique=True, nullable=False)
    identity = db.Column(db.String(1024), nullable=False)
    split = db.Column(db.String(16), nullable=False)
    data_hash = db.Column(db.String(64), nullable=False)
    description = db.Column(db.Text, nullable=False)  # Stored as JSON
    path = db.Column(db.String(1024), nullable=False)
    frames = db.Column(db.Integer, default=0)
    length = db.Column(db.Integer, default=0)
    created_at = db.Column(db.DateTime, default=datetime.utcnow)


class ExperimentResult(db.Model):
    id = db.Column(db.Integer, primary_key=True)
    experiment = db.Column(db.String(64), nullable=False)
    grid_index = db.Column(db.Integer, nullable=False)
    parameters = db.Column(db.Text, nullable=False)  # Stored as JSON
    unit = db.Column(db.String(16))
    accuracy = db.Column(db.Float)
    macro_f1 = db.Column(db.Float)
    parameter_count = db.Column(db.Integer)
    train_seconds = db.Column(db.Float)
    inference_ms = db.Column(db.Float)
    error = db.Column(db.Text)
    created_at = db.Column(db.DateTime, default=datetime.utcnow)

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "grid_index": self.grid_index,
            "parameters": json.loads(self.parameters),
            "unit": self.unit,
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "parameter_count": self.parameter_count,
            "train_seconds": self.train_seconds,
            "inference_ms": self.inference_ms,
            "error": self.error,
        }
