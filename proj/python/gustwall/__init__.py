"""Python bindings for the gustwall fan-array wind generator toolkit."""

from ._gustwall import (
    GustwallError,
    SplineFit,
    __version__,
    analyze_flow_log,
    choose_lambda,
    condition_stats,
    crc16,
    decode_frame,
    default_calibration_csv,
    encode_ping,
    encode_set_pwm,
    flow_stats,
    gust_align,
    lowpass,
    simulate,
    smoothing_spline,
    speed_for_duty,
    speed_to_duty,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
