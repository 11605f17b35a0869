import os

# Sensor data geometry (SHL challenge 2018 distribution)
NATIVE_RATE_HZ = 100.0
FRAME_SECONDS = 60
SHL_SAMPLES_PER_FRAME = 6000
SENSORS = ("A", "G", "M")  # accelerometer, gyroscope, magnetometer
AXES = ("x", "y", "z")
MODE_NAMES = ("Still", "Walk", "Run", "Bike", "Car", "Bus", "Train", "Subway")
NUM_CLASSES = len(MODE_NAMES)

# Default SHL file names, one file per sensor-axis plus labels
SHL_FILE_NAMES = {
    "A": {"x": "Acc_x.txt", "y": "Acc_y.txt", "z": "Acc_z.txt"},
    "G": {"x": "Gyr_x.txt", "y": "Gyr_y.txt", "z": "Gyr_z.txt"},
    "M": {"x": "Mag_x.txt", "y": "Mag_y.txt", "z": "Mag_z.txt"},
}
SHL_LABEL_FILE = "Label.txt"
SHL_LOAD_WORKERS = 4

# Data-loader settings
WINDOW_S = 60.0
TARGET_HZ = 20.0
SMOOTHING_M = 5
SWEEP_WINDOWS = (60.0, 30.0, 20.0, 10.0, 5.0)
SWEEP_RATES = (100.0, 50.0, 25.0, 20.0, 10.0, 5.0, 1.0)

# Model input channels, in the order the network consumes them
DEFAULT_CHANNELS = ("A_jerk", "A_mag", "M_jerk", "G_xyz", "G_mag")

# Architecture: (filters, kernel, batch_norm_before)
CONV_STACK = ((32, 15, True), (64, 10, False), (64, 10, True), (128, 5, True), (128, 5, True))
POOL_SIZE = 4
POOL_STRIDE = 2
PYRAMID_TAPS = (1, 2, 3, 5)
BILSTM_UNITS = 128
DENSE_SIZES = (128, 8)

# Engine constants
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9
ADAM_EPSILON = 1e-8
LSTM_FORGET_BIAS = 1.0

# Training protocol
BATCH_SIZE = 50
LEARNING_RATE = 1e-4
MIN_LEARNING_RATE = 1e-5
LR_FACTOR = 0.2
LR_PATIENCE = 3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
L2_REGULARIZATION = 0.001
EARLY_STOP_PATIENCE = 5
MAX_EPOCHS = 100
VALIDATION_FRACTION = 0.1  # 90:10 stratified split
SEED = 0

# Synthetic desk-scale data
SYNTH_FRAMES_PER_MODE = 50
SYNTH_FRAME_SECONDS = 5.0

# Experiment harness
TIMING_REPEATS = 1000
TIMING_WARMUP = 10
OUTPUT_DIR = "runs"
CACHE_DIR = os.path.join(OUTPUT_DIR, "cache")
DATABASE_URL = os.environ.get("FPBILSTM_DATABASE_URL", "")  # empty: sqlite file in the output dir

# Checkpoint container
CHECKPOINT_FORMAT = "fpbilstm-checkpoint"
CHECKPOINT_VERSION = 1

# Inference API
SERVE_CHECKPOINT = os.environ.get("FPBILSTM_CHECKPOINT", "")
MAX_PREDICT_FRAMES = 256
