"""Central defaults for the desk-scale profile.

Everything tunable lives here so the tests and the CLI pin one profile.
"""

# timing
DT = 0.01                 # s, IMU step
IMU_HZ = 100.0
GPS_HZ = 10.0
VO_HZ = 10.0
VO_PHASE = 0.05           # s, VO offset from the GPS grid

# sensor quality (per-sample std for white noise, per-sqrt(s) for walks)
# high-grade IMU: slow GPS-offset absorption, so attack transients persist
GYRO_STD = 0.005          # rad/s
ACCEL_STD = 0.05          # m/s^2
GYRO_BIAS_WALK = 2e-5     # rad/s / sqrt(s)
ACCEL_BIAS_WALK = 2e-4    # m/s^2 / sqrt(s)
GPS_POS_STD = 1.25        # m
GPS_ATT_STD = 0.05        # rad
VO_POS_STD = 1.0          # m (VO noisier than GPS; see decisions ledger)
VO_ATT_STD = 0.1          # rad
KEYFRAME_EVERY = 50       # VO frames per keyframe

# attack presets
ATTACK_I_MAGNITUDE = 5.0  # m
ATTACK_II_MAGNITUDE = 3.0 # m
BURST_DURATION = 2.0      # s (shorter than the filter's absorption transient)
BURST_PERIOD = 16.0       # s  (~12.5% of post-warmup GPS frames attacked)
SPARSE_HIT_RATE = 0.12    # per GPS frame
ATTACK_START_FRAC = 0.2   # leading fraction of every run kept clean

# detector calibration
CALIBRATION_FRAC = 0.2    # leading clean fraction used for residue stats
BHT_CONFIDENCE = 0.99
BHT_DOF = 6

# attention detector hyperparameters
WINDOW = 100              # l
D_MODEL = 32
LAYERS = 3                # H
FF_HIDDEN = 64
DISTANCE_POWER = 1.0      # p
LAMBDA_DIS = 1.0
ALPHA_MIN = 0.5
ALPHA_MAX = 0.5
LEARNING_RATE = 1e-4
EPOCHS = 20
BATCH_SIZE = 8
WINDOWS_PER_EPOCH = 80
LABEL_FRACTION = 0.10
NOMINAL_ATTACK_FRACTION = 0.12  # default alarm-threshold quantile is 1 - this

# resilient fusion
HYSTERESIS_CLEAR_STEPS = 10   # consecutive clear GPS frames before re-admission
ALARM_LATENCY_S = 1.0         # simulated detector latency

# desk-scale experiment sizing
TRAIN_RESIDUES = 20000
TEST_RESIDUES = 5000

# full-scale sizing (~4x desk scale), selected with --full-scale
FULL_SCALE_TRAIN_RESIDUES = 83700
FULL_SCALE_TEST_RESIDUES = 18700

# theorem/lemma diagnostic bounds (checked on clean runs)
JACOBIAN_NORM_MAX = 50.0      # ||grad f||_2 and ||grad g||_2 ceiling
COV_EIG_MIN = 1e-12
COV_EIG_MAX = 50.0
