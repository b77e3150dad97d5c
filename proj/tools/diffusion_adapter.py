#!/usr/bin/env python3
"""HTTP adapter exposing a diffusers pipeline, the CLIP text encoder and a
sentence-transformer to promptlens.

    pip install diffusers transformers sentence-transformers fastapi uvicorn
    python tools/diffusion_adapter.py --model CompVis/stable-diffusion-v1-4 --port 8765
    export PROMPTLENS_BACKEND_URL=http://127.0.0.1:8765

Endpoints (JSON in, JSON or PNG out):
    POST /generate         {model_id, seed, scheduler_id, steps, guidance_scale, width, height, prompt} -> image/png
    POST /tokenize         {text} -> {count}
    POST /encode/clip      {text} -> {rows: 77, cols: 768, data: [...]}
    POST /encode/sentence  {text} -> {data: [...]}
"""
import argparse
import io
import threading

import torch
import uvicorn
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel


class GenerateRequest(BaseModel):
    model_id: str
    seed: int
    scheduler_id: str = "PNDMScheduler"
    steps: int = 50
    guidance_scale: float = 7.5
    width: int = 512
    height: int = 512
    prompt: str


class TextRequest(BaseModel):
    text: str


class Models:
    def __init__(self, model_id, sentence_model, device):
        self.model_id = model_id
        self.sentence_model = sentence_model
        self.device = device
        self.lock = threading.Lock()
        self._pipe = None
        self._sbert = None

    def pipe(self):
        if self._pipe is None:
            import diffusers

            dtype = torch.float16 if self.device == "cuda" else torch.float32
            pipe = diffusers.StableDiffusionPipeline.from_pretrained(self.model_id, torch_dtype=dtype)
            pipe.safety_checker = None
            self._pipe = pipe.to(self.device)
        return self._pipe

    def sbert(self):
        if self._sbert is None:
            from sentence_transformers import SentenceTransformer

            self._sbert = SentenceTransformer(self.sentence_model, device=self.device)
        return self._sbert


def build_app(models):
    app = FastAPI()

    @app.post("/generate")
    def generate(req: GenerateRequest):
        if req.model_id != models.model_id:
            raise HTTPException(422, f"adapter serves {models.model_id}, not {req.model_id}")
        import diffusers

        with models.lock:
            try:
                pipe = models.pipe()
            except Exception as e:  # noqa: BLE001
                raise HTTPException(503, f"cannot load pipeline: {e}")
            scheduler_cls = getattr(diffusers, req.scheduler_id, None)
            if scheduler_cls is None:
                raise HTTPException(422, f"unknown scheduler {req.scheduler_id}")
            pipe.scheduler = scheduler_cls.from_config(pipe.scheduler.config)
            generator = torch.Generator(device="cpu").manual_seed(req.seed)
            image = pipe(req.prompt, num_inference_steps=req.steps, guidance_scale=req.guidance_scale,
                         width=req.width, height=req.height, generator=generator).images[0]
        buf = io.BytesIO()
        image.convert("RGB").save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.post("/tokenize")
    def tokenize(req: TextRequest):
        tok = models.pipe().tokenizer
        return {"count": len(tok(req.text, truncation=False).input_ids)}

    @app.post("/encode/clip")
    def encode_clip(req: TextRequest):
        pipe = models.pipe()
        ids = pipe.tokenizer(req.text, padding="max_length", max_length=77, truncation=False,
                             return_tensors="pt").input_ids
        if ids.shape[1] > 77:
            raise HTTPException(422, f"prompt has {ids.shape[1]} tokens, budget is 77")
        with models.lock, torch.no_grad():
            hidden = pipe.text_encoder(ids.to(models.device))[0][0].float().cpu()
        return {"rows": hidden.shape[0], "cols": hidden.shape[1], "data": hidden.flatten().tolist()}

    @app.post("/encode/sentence")
    def encode_sentence(req: TextRequest):
        with models.lock:
            vec = models.sbert().encode(req.text)
        return {"data": [float(x) for x in vec]}

    return app


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--model", default="CompVis/stable-diffusion-v1-4")
    parser.add_argument("--sentence-model", default="sentence-transformers/all-MiniLM-L6-v2")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    parser.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    args = parser.parse_args()
    uvicorn.run(build_app(Models(args.model, args.sentence_model, args.device)), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
