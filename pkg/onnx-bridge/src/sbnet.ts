/**
 * Reader and reference evaluator for the sbnet text model format produced by
 * the benchmark pipeline (versioned header, layer directives, 17-significant-
 * digit decimal weights). The evaluator runs in float64 and is the ground
 * truth the exported ONNX graph is checked against.
 */

import * as fs from "fs";

export type Layer =
  | { kind: "dense"; width: number }
  | { kind: "conv2d"; filters: number; kh: number; kw: number; stride: number; padding: number }
  | { kind: "avgpool2d"; kh: number; kw: number; stride: number }
  | { kind: "act"; fn: "relu" | "tanh" | "sigmoid" }
  | { kind: "flatten" };

export interface SbnetModel {
  name: string;
  inputShape: number[];
  classes: number;
  layers: Layer[];
  // tensors[layerIndex] = {weight?, bias?} flat row-major float64
  tensors: Map<number, { weight?: Float64Array; bias?: Float64Array }>;
}

export class SbnetError extends Error {}

export function parseSbnet(text: string, where = "sbnet"): SbnetModel {
  const lines = text
    .split("\n")
    .map((l) => l.split("#", 1)[0].trim())
    .filter((l) => l.length > 0);
  if (lines.length === 0) throw new SbnetError(`${where}: empty file`);
  const head = lines[0].split(/\s+/);
  if (head[0] !== "sbnet") throw new SbnetError(`${where}: missing sbnet header`);
  if (head[1] !== "1") throw new SbnetError(`${where}: unsupported version ${head[1]}`);

  const model: SbnetModel = {
    name: "model",
    inputShape: [],
    classes: 0,
    layers: [],
    tensors: new Map(),
  };
  let i = 1;
  let sawEnd = false;
  while (i < lines.length) {
    const parts = lines[i].split(/\s+/);
    const at = `${where}:${i + 1}`;
    switch (parts[0]) {
      case "name":
        model.name = parts.slice(1).join(" ") || "model";
        break;
      case "input":
        model.inputShape = parts.slice(1).map(Number);
        break;
      case "classes":
        model.classes = Number(parts[1]);
        break;
      case "seed":
        break;
      case "layer":
        model.layers.push(parseLayer(parts.slice(1), at));
        break;
      case "tensor": {
        const idx = Number(parts[1]);
        const key = parts[2];
        const count = Number(parts[3]);
        if (!Number.isInteger(idx) || !Number.isInteger(count) || (key !== "weight" && key !== "bias"))
          throw new SbnetError(`${at}: malformed tensor directive`);
        const vals = new Float64Array(count);
        let got = 0;
        while (got < count) {
          i += 1;
          if (i >= lines.length) throw new SbnetError(`${where}: truncated tensor data`);
          for (const tok of lines[i].split(/\s+/)) {
            const v = Number(tok);
            if (!Number.isFinite(v)) throw new SbnetError(`${where}:${i + 1}: bad number '${tok}'`);
            if (got >= count) throw new SbnetError(`${at}: too many values`);
            vals[got++] = v;
          }
        }
        const slot = model.tensors.get(idx) ?? {};
        slot[key as "weight" | "bias"] = vals;
        model.tensors.set(idx, slot);
        break;
      }
      case "end":
        sawEnd = true;
        break;
      default:
        throw new SbnetError(`${at}: unknown directive '${parts[0]}'`);
    }
    if (sawEnd) break;
    i += 1;
  }
  if (!sawEnd) throw new SbnetError(`${where}: truncated file (missing end)`);
  if (model.inputShape.length === 0 || model.classes < 1)
    throw new SbnetError(`${where}: missing input/classes header`);
  return model;
}

export function loadSbnet(path: string): SbnetModel {
  return parseSbnet(fs.readFileSync(path, "utf8"), path);
}

function parseLayer(parts: string[], at: string): Layer {
  switch (parts[0]) {
    case "dense":
      return { kind: "dense", width: Number(parts[1]) };
    case "conv2d":
      return {
        kind: "conv2d",
        filters: Number(parts[1]),
        kh: Number(parts[2]),
        kw: Number(parts[3]),
        stride: Number(parts[4]),
        padding: Number(parts[5]),
      };
    case "avgpool2d":
      return { kind: "avgpool2d", kh: Number(parts[1]), kw: Number(parts[2]), stride: Number(parts[3]) };
    case "act":
      if (parts[1] !== "relu" && parts[1] !== "tanh" && parts[1] !== "sigmoid")
        throw new SbnetError(`${at}: unknown activation '${parts[1]}'`);
      return { kind: "act", fn: parts[1] };
    case "flatten":
      return { kind: "flatten" };
    default:
      throw new SbnetError(`${at}: unknown layer '${parts[0]}'`);
  }
}

/** Shape after each layer, validating composition. */
export function layerShapes(model: SbnetModel): number[][] {
  let shape = [...model.inputShape];
  const out: number[][] = [];
  model.layers.forEach((layer, i) => {
    if (layer.kind === "dense") {
      if (shape.length !== 1) throw new SbnetError(`layer ${i}: dense needs flat input`);
      shape = [layer.width];
    } else if (layer.kind === "conv2d") {
      if (shape.length !== 3) throw new SbnetError(`layer ${i}: conv needs CHW input`);
      const [, h, w] = shape;
      const ho = Math.floor((h + 2 * layer.padding - layer.kh) / layer.stride) + 1;
      const wo = Math.floor((w + 2 * layer.padding - layer.kw) / layer.stride) + 1;
      if (ho < 1 || wo < 1) throw new SbnetError(`layer ${i}: kernel does not fit`);
      shape = [layer.filters, ho, wo];
    } else if (layer.kind === "avgpool2d") {
      const [c, h, w] = shape;
      const ho = Math.floor((h - layer.kh) / layer.stride) + 1;
      const wo = Math.floor((w - layer.kw) / layer.stride) + 1;
      if (ho < 1 || wo < 1) throw new SbnetError(`layer ${i}: window does not fit`);
      shape = [c, ho, wo];
    } else if (layer.kind === "flatten") {
      shape = [shape.reduce((a, b) => a * b, 1)];
    }
    out.push([...shape]);
  });
  return out;
}

function relu(x: Float64Array): Float64Array {
  return x.map((v) => (v > 0 ? v : 0));
}

function sigmoid(x: Float64Array): Float64Array {
  return x.map((v) => (v >= 0 ? 1 / (1 + Math.exp(-v)) : Math.exp(v) / (1 + Math.exp(v))));
}

export function conv2d(
  x: Float64Array, cin: number, h: number, w: number,
  weight: Float64Array, filters: number, kh: number, kw: number,
  stride: number, padding: number, bias?: Float64Array,
): Float64Array {
  const ho = Math.floor((h + 2 * padding - kh) / stride) + 1;
  const wo = Math.floor((w + 2 * padding - kw) / stride) + 1;
  const out = new Float64Array(filters * ho * wo);
  for (let f = 0; f < filters; f++) {
    for (let yo = 0; yo < ho; yo++) {
      for (let xo = 0; xo < wo; xo++) {
        let acc = bias ? bias[f] : 0;
        for (let c = 0; c < cin; c++) {
          for (let ky = 0; ky < kh; ky++) {
            const yi = yo * stride - padding + ky;
            if (yi < 0 || yi >= h) continue;
            for (let kx = 0; kx < kw; kx++) {
              const xi = xo * stride - padding + kx;
              if (xi < 0 || xi >= w) continue;
              acc += x[(c * h + yi) * w + xi] * weight[((f * cin + c) * kh + ky) * kw + kx];
            }
          }
        }
        out[(f * ho + yo) * wo + xo] = acc;
      }
    }
  }
  return out;
}

export function avgpool2d(
  x: Float64Array, c: number, h: number, w: number,
  kh: number, kw: number, stride: number,
): Float64Array {
  const ho = Math.floor((h - kh) / stride) + 1;
  const wo = Math.floor((w - kw) / stride) + 1;
  const out = new Float64Array(c * ho * wo);
  const inv = 1 / (kh * kw);
  for (let ci = 0; ci < c; ci++) {
    for (let yo = 0; yo < ho; yo++) {
      for (let xo = 0; xo < wo; xo++) {
        let acc = 0;
        for (let ky = 0; ky < kh; ky++)
          for (let kx = 0; kx < kw; kx++)
            acc += x[(ci * h + yo * stride + ky) * w + (xo * stride + kx)];
        out[(ci * ho + yo) * wo + xo] = acc * inv;
      }
    }
  }
  return out;
}

/** Float64 forward pass over one flat input; returns the logits. */
export function sbnetForward(model: SbnetModel, input: Float64Array): Float64Array {
  const shapes = layerShapes(model);
  const d = model.inputShape.reduce((a, b) => a * b, 1);
  if (input.length !== d) throw new SbnetError(`input has ${input.length} values, expected ${d}`);
  let cur = Float64Array.from(input);
  let shape = [...model.inputShape];
  model.layers.forEach((layer, i) => {
    if (layer.kind === "dense") {
      const { weight, bias } = model.tensors.get(i) ?? {};
      if (!weight || !bias) throw new SbnetError(`layer ${i}: missing dense tensors`);
      const out = new Float64Array(layer.width);
      const fanIn = cur.length;
      for (let o = 0; o < layer.width; o++) {
        let acc = bias[o];
        for (let j = 0; j < fanIn; j++) acc += weight[o * fanIn + j] * cur[j];
        out[o] = acc;
      }
      cur = out;
    } else if (layer.kind === "conv2d") {
      const { weight, bias } = model.tensors.get(i) ?? {};
      if (!weight || !bias) throw new SbnetError(`layer ${i}: missing conv tensors`);
      cur = conv2d(cur, shape[0], shape[1], shape[2], weight, layer.filters,
        layer.kh, layer.kw, layer.stride, layer.padding, bias);
    } else if (layer.kind === "avgpool2d") {
      cur = avgpool2d(cur, shape[0], shape[1], shape[2], layer.kh, layer.kw, layer.stride);
    } else if (layer.kind === "act") {
      cur = layer.fn === "relu" ? relu(cur) : layer.fn === "tanh" ? cur.map(Math.tanh) : sigmoid(cur);
    }
    shape = shapes[i];
  });
  return cur;
}
