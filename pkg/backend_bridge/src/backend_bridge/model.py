"""Optional wrapper around a pretrained latent-diffusion denoiser.

Requires the ``model`` extra (torch + diffusers + transformers).  The
adapter owns everything the engine stays free of: prompt tokenization
and embedding (cached per prompt pair), the VAE-latent convention for
the session shape, classifier-free guidance over a cond/uncond pair,
and optional depth-style conditioning through a control module fed from
the request's control image.

Loading checkpoints is deployment configuration; any UNet-style
pipeline id that ``diffusers`` can resolve works.
"""

from __future__ import annotations

from typing import Any

import numpy as np


class ModelUnavailableError(RuntimeError):
    """torch/diffusers are not installed or the checkpoint failed to load."""


class DiffusersDenoiser:
    """DenoiserPipeline backed by a diffusers StableDiffusion-family UNet."""

    def __init__(
        self,
        model_id: str,
        controlnet_id: str | None = None,
        device: str = "cpu",
        latent_hw: int = 64,
    ) -> None:
        try:
            import torch
            from diffusers import ControlNetModel, StableDiffusionPipeline
        except ImportError as exc:
            raise ModelUnavailableError(
                "install the 'model' extra (torch, diffusers, transformers) to serve a real denoiser"
            ) from exc

        self._torch = torch
        self._device = device
        try:
            pipe = StableDiffusionPipeline.from_pretrained(model_id)
            self._controlnet = None
            if controlnet_id is not None:
                self._controlnet = ControlNetModel.from_pretrained(controlnet_id).to(device)
        except Exception as exc:
            raise ModelUnavailableError(f"failed to load {model_id!r}: {exc}") from exc
        pipe = pipe.to(device)
        self._unet = pipe.unet
        self._tokenizer = pipe.tokenizer
        self._text_encoder = pipe.text_encoder
        self._prompt_cache: dict[tuple[str, str], Any] = {}
        channels = int(self._unet.config.in_channels)
        self.latent_shape = (channels, latent_hw, latent_hw)

    def _embeddings(self, prompt: str, negative_prompt: str):
        key = (prompt, negative_prompt)
        if key not in self._prompt_cache:
            torch = self._torch
            with torch.no_grad():
                tokens = self._tokenizer(
                    [negative_prompt, prompt],
                    padding="max_length",
                    max_length=self._tokenizer.model_max_length,
                    truncation=True,
                    return_tensors="pt",
                ).input_ids.to(self._device)
                self._prompt_cache[key] = self._text_encoder(tokens)[0]
        return self._prompt_cache[key]

    def predict_eps(
        self,
        x_t: np.ndarray,
        t: int,
        prompt: str,
        negative_prompt: str,
        cfg_weight: float,
        control_image: np.ndarray | None,
        control_weight: float,
    ) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            latents = torch.from_numpy(np.asarray(x_t, dtype=np.float32))[None].to(self._device)
            latents = latents.repeat(2, 1, 1, 1)
            timestep = torch.tensor([t - 1], device=self._device)
            embeddings = self._embeddings(prompt, negative_prompt)

            unet_kwargs: dict[str, Any] = {}
            if self._controlnet is not None and control_image is not None:
                control = torch.from_numpy(np.asarray(control_image, dtype=np.float32))[None]
                control = control.repeat(2, 1, 1, 1).to(self._device)
                down, mid = self._controlnet(
                    latents,
                    timestep,
                    encoder_hidden_states=embeddings,
                    controlnet_cond=control,
                    conditioning_scale=float(control_weight),
                    return_dict=False,
                )
                unet_kwargs = {
                    "down_block_additional_residuals": down,
                    "mid_block_additional_residual": mid,
                }

            eps = self._unet(
                latents, timestep, encoder_hidden_states=embeddings, **unet_kwargs
            ).sample
            eps_uncond, eps_cond = eps[0], eps[1]
            guided = eps_uncond + cfg_weight * (eps_cond - eps_uncond)
            return guided.cpu().numpy().astype(np.float64)
