"""Cameras, shell sampling, volume compositing and image rendering."""

from .camera import Camera, camera_from_fov, generate_rays, look_at, pixel_rays, read_cameras_json, write_cameras_json
from .images import ImageFormatError, read_image, read_png, read_raw, write_image, write_png, write_raw
from .pipeline import (DEFAULT_SAMPLES, CaptureModel, RenderSettings, SampleEval, SampleGeometry, backward_samples,
                       default_s_max, evaluate_samples, mapped_sample_inputs, project_samples, render_capture_view,
                       render_mapped, render_rays, shade_outputs)
from .volume import CompositeCache, RaySamplePlan, make_sample_plan, volume_render, volume_render_backward

__all__ = [
    "Camera", "camera_from_fov", "generate_rays", "look_at", "pixel_rays", "read_cameras_json", "write_cameras_json",
    "ImageFormatError", "read_image", "read_png", "read_raw", "write_image", "write_png", "write_raw",
    "DEFAULT_SAMPLES", "CaptureModel", "RenderSettings", "SampleEval", "SampleGeometry", "backward_samples",
    "default_s_max", "evaluate_samples", "mapped_sample_inputs", "project_samples", "render_capture_view",
    "render_mapped", "render_rays", "shade_outputs", "CompositeCache", "RaySamplePlan", "make_sample_plan",
    "volume_render", "volume_render_backward",
]
