"""
闭合枚举与默认值表，供 tensor / graph / backends / runcfg / reportlog 统一使用。

默认值只在这里出现一次（CONFIG_DEFAULTS），其余模块一律引用。
"""

# 算子种类（闭合枚举）。加载器拒绝此表之外的 op。
OP_KINDS = (
    "Conv2d",
    "Linear",
    "Relu",
    "Add",
    "Concat",
    "MaxPool2d",
    "GlobalAvgPool",
    "BatchNormAffine",
    "Softmax",
    "Flatten",
    "BilinearResize",
    "ArgmaxChannel",
    "Nms",
)

# 每种算子的属性集合（必须恰好匹配）
OP_ATTRS = {
    "Conv2d": ("stride", "padding"),
    "Linear": (),
    "Relu": (),
    "Add": (),
    "Concat": ("axis",),
    "MaxPool2d": ("kernel", "stride"),
    "GlobalAvgPool": (),
    "BatchNormAffine": (),
    "Softmax": ("axis",),
    "Flatten": (),
    "BilinearResize": ("out_h", "out_w"),
    "ArgmaxChannel": (),
    "Nms": ("iou_threshold",),
}

# 输入个数：(最少, 最多)；None 表示不限
OP_ARITY = {
    "Conv2d": (3, 3),  # x, weight, bias
    "Linear": (3, 3),  # x, weight, bias
    "Relu": (1, 1),
    "Add": (2, 2),
    "Concat": (2, None),
    "MaxPool2d": (1, 1),
    "GlobalAvgPool": (1, 1),
    "BatchNormAffine": (3, 3),  # x, scale, shift
    "Softmax": (1, 1),
    "Flatten": (1, 1),
    "BilinearResize": (1, 1),
    "ArgmaxChannel": (1, 1),
    "Nms": (2, 2),  # boxes, scores
}

# 含归约的算子：reduction_order 在这些算子内部生效
REDUCTION_OPS = ("Conv2d", "Linear", "GlobalAvgPool", "Softmax")

TASKS = ("classification", "segmentation", "detection")

# builtin 模型名 -> 任务
BUILTIN_MODELS = {
    "classifier": "classification",
    "segmenter": "segmentation",
    "detector": "detection",
}

MODEL_SOURCES = ("builtin", "file")
# 兼容研究原型里的 from: library / repo 写法
SOURCE_ALIASES = {"library": "builtin", "repo": "file"}

BACKEND_KINDS = ("reference", "optimized")
PRECISIONS = ("full", "reduced")
REDUCTION_ORDERS = ("sequential", "pairwise")
NMS_ORDERS = ("stable", "unstable")
VERIFICATION_MODES = ("eq1", "elementwise")

STATUSES = ("PASS", "FAIL", "ERROR")
FAILURE_CATEGORIES = (
    "NONE",
    "NUMERIC_DRIFT",
    "ORDER_TIEBREAK",
    "UNSUPPORTED_OP",
    "RUNTIME_ERROR",
)

NUM_CLASSES_CLASSIFICATION = 10
NUM_CLASSES_SEGMENTATION = 4
NUM_DETECTION_CANDIDATES = 64
DEFAULT_IOU_THRESHOLD = 0.5

# binary16 最大有限值
HALF_MAX = 65504.0

DEFAULT_SEED = 5
DEFAULT_ATOL_GRID = (1e-6, 1e-5, 1e-4, 1e-3)
DEFAULT_RTOL = 1e-5

# 运行配置默认值（唯一出处）
CONFIG_DEFAULTS = {
    "means": (0.485, 0.456, 0.406),
    "stds": (0.229, 0.224, 0.225),
    "atol": 1e-5,
    "rtol": 1e-5,
    "mode": "eq1",
    "resize_multiple": 32,
    "seed": DEFAULT_SEED,
    "repeats": 11,
    "warmup": False,
    "optimized": True,
    "precision": "full",
    "normalize": True,
    "capture_activations": False,
    # optimized 后端的默认漂移来源
    "reduction_order": "pairwise",
    "fuse_conv_relu": True,
    "nms_order": "unstable",
}

# Tier-3 通过阈值默认值
TASK_THRESHOLD_DEFAULTS = {
    "topk": 5,
    "topk_agreement": 0.8,
    "miou": 0.99,
    "detection_f1": 1.0,
    "match_iou": 0.5,
}
