/**
 * ONNX graph construction and parsing for the layer set the benchmark uses:
 * Conv, AveragePool, Flatten, Gemm, Relu, Tanh, Sigmoid. Tensors default to
 * double so exported graphs match the float64 source weights exactly; a
 * float32 mode exists for runtimes without double kernels.
 */

import { Writer, decodeFields, decodePackedInts, signedFromVarint, Field } from "./protobuf";
import { SbnetModel, layerShapes } from "./sbnet";

export const OPSET_VERSION = 13;
const DT_FLOAT = 1;
const DT_DOUBLE = 11;

export interface ExportOptions {
  float32?: boolean;
}

export interface LayerMapping {
  layer: number;
  sbnet: string;
  onnx: string;
  attributes?: Record<string, number[] | number>;
}

export interface ExportResult {
  bytes: Buffer;
  opset: number;
  mapping: LayerMapping[];
}

function attrInt(name: string, value: number): Writer {
  return new Writer().string(1, name).int(3, value).int(20, 2); // type INT
}

function attrInts(name: string, values: number[]): Writer {
  return new Writer().string(1, name).packedInts(8, values).int(20, 7); // INTS
}

function attrFloat(name: string, value: number): Writer {
  return new Writer().string(1, name).float(2, value).int(20, 1); // FLOAT
}

function tensorProto(name: string, dims: number[], data: Float64Array,
                     float32: boolean): Writer {
  const w = new Writer();
  w.packedInts(1, dims);
  w.int(2, float32 ? DT_FLOAT : DT_DOUBLE);
  w.string(8, name);
  const raw = Buffer.alloc(data.length * (float32 ? 4 : 8));
  for (let i = 0; i < data.length; i++) {
    if (float32) raw.writeFloatLE(Math.fround(data[i]), i * 4);
    else raw.writeDoubleLE(data[i], i * 8);
  }
  w.bytes(9, raw);
  return w;
}

function valueInfo(name: string, dims: number[], float32: boolean): Writer {
  const shape = new Writer();
  for (const d of dims) shape.message(1, new Writer().int(1, d));
  const tensorType = new Writer().int(1, float32 ? DT_FLOAT : DT_DOUBLE).message(2, shape);
  return new Writer().string(1, name).message(2, new Writer().message(1, tensorType));
}

function node(opType: string, name: string, inputs: string[], outputs: string[],
              attrs: Writer[] = []): Writer {
  const w = new Writer();
  for (const i of inputs) w.string(1, i);
  for (const o of outputs) w.string(2, o);
  w.string(3, name);
  w.string(4, opType);
  for (const a of attrs) w.message(5, a);
  return w;
}

/** Build ModelProto bytes plus the per-layer mapping log. */
export function exportOnnx(model: SbnetModel, opts: ExportOptions = {}): ExportResult {
  const float32 = !!opts.float32;
  const shapes = layerShapes(model);
  const graph = new Writer();
  const mapping: LayerMapping[] = [];

  const inputDims = [1, ...model.inputShape];
  let cur = "input";
  let flat = model.inputShape.length === 1;

  model.layers.forEach((layer, i) => {
    const out = i === model.layers.length - 1 ? "logits" : `t${i}`;
    const prevShape = i === 0 ? model.inputShape : shapes[i - 1];
    if (layer.kind === "conv2d") {
      const t = model.tensors.get(i)!;
      graph.message(5, tensorProto(`w${i}`, [layer.filters, prevShape[0], layer.kh, layer.kw], t.weight!, float32));
      graph.message(5, tensorProto(`b${i}`, [layer.filters], t.bias!, float32));
      const attrs = [
        attrInts("kernel_shape", [layer.kh, layer.kw]),
        attrInts("strides", [layer.stride, layer.stride]),
        attrInts("pads", [layer.padding, layer.padding, layer.padding, layer.padding]),
        attrInts("dilations", [1, 1]),
        attrInt("group", 1),
      ];
      graph.message(1, node("Conv", `conv${i}`, [cur, `w${i}`, `b${i}`], [out], attrs));
      mapping.push({ layer: i, sbnet: "conv2d", onnx: "Conv",
        attributes: { kernel_shape: [layer.kh, layer.kw], strides: [layer.stride, layer.stride],
                      pads: [layer.padding, layer.padding, layer.padding, layer.padding] } });
    } else if (layer.kind === "avgpool2d") {
      const attrs = [
        attrInts("kernel_shape", [layer.kh, layer.kw]),
        attrInts("strides", [layer.stride, layer.stride]),
      ];
      graph.message(1, node("AveragePool", `pool${i}`, [cur], [out], attrs));
      mapping.push({ layer: i, sbnet: "avgpool2d", onnx: "AveragePool",
        attributes: { kernel_shape: [layer.kh, layer.kw], strides: [layer.stride, layer.stride] } });
    } else if (layer.kind === "flatten") {
      // emitted even for already-flat tensors so the graph mirrors the
      // source layer list one to one
      graph.message(1, node("Flatten", `flatten${i}`, [cur], [out], [attrInt("axis", 1)]));
      flat = true;
      mapping.push({ layer: i, sbnet: "flatten", onnx: "Flatten" });
    } else if (layer.kind === "dense") {
      const t = model.tensors.get(i)!;
      const fanIn = t.weight!.length / layer.width;
      graph.message(5, tensorProto(`w${i}`, [layer.width, fanIn], t.weight!, float32));
      graph.message(5, tensorProto(`b${i}`, [layer.width], t.bias!, float32));
      const attrs = [attrFloat("alpha", 1), attrFloat("beta", 1), attrInt("transB", 1)];
      graph.message(1, node("Gemm", `gemm${i}`, [cur, `w${i}`, `b${i}`], [out], attrs));
      mapping.push({ layer: i, sbnet: "dense", onnx: "Gemm", attributes: { transB: 1 } });
    } else {
      const op = layer.fn === "relu" ? "Relu" : layer.fn === "tanh" ? "Tanh" : "Sigmoid";
      graph.message(1, node(op, `act${i}`, [cur], [out]));
      mapping.push({ layer: i, sbnet: `act ${layer.fn}`, onnx: op });
    }
    cur = out;
  });

  graph.string(2, model.name);
  graph.message(11, valueInfo("input", inputDims, float32));
  graph.message(12, valueInfo("logits", [1, model.classes], float32));

  const modelProto = new Writer();
  modelProto.int(1, 8); // ir_version
  modelProto.string(2, "cexforge-onnx-bridge");
  modelProto.message(7, graph);
  modelProto.message(8, new Writer().string(1, "").int(2, OPSET_VERSION));
  return { bytes: modelProto.finish(), opset: OPSET_VERSION, mapping };
}

// ------------------------------------------------------------- parsing

export interface OnnxAttr {
  name: string;
  i?: number;
  f?: number;
  ints?: number[];
}

export interface OnnxNode {
  opType: string;
  name: string;
  inputs: string[];
  outputs: string[];
  attrs: Map<string, OnnxAttr>;
}

export interface OnnxTensor {
  name: string;
  dims: number[];
  data: Float64Array;
}

export interface OnnxGraph {
  nodes: OnnxNode[];
  initializers: Map<string, OnnxTensor>;
  inputName: string;
  inputDims: number[];
  outputName: string;
  elemType: number;
}

function parseAttr(buf: Buffer): OnnxAttr {
  const attr: OnnxAttr = { name: "" };
  for (const f of decodeFields(buf)) {
    if (f.field === 1) attr.name = f.data.toString("utf8");
    else if (f.field === 2) attr.f = f.data.readFloatLE(0);
    else if (f.field === 3) attr.i = signedFromVarint(f.value);
    else if (f.field === 8) {
      if (f.wire === 2) attr.ints = decodePackedInts(f.data);
      else attr.ints = [...(attr.ints ?? []), signedFromVarint(f.value)];
    }
  }
  return attr;
}

function parseTensor(buf: Buffer): OnnxTensor {
  let dims: number[] = [];
  let name = "";
  let dataType = DT_DOUBLE;
  let raw: Buffer | null = null;
  const doubles: number[] = [];
  const floats: number[] = [];
  for (const f of decodeFields(buf)) {
    if (f.field === 1) dims = f.wire === 2 ? decodePackedInts(f.data) : [...dims, Number(f.value)];
    else if (f.field === 2) dataType = Number(f.value);
    else if (f.field === 8) name = f.data.toString("utf8");
    else if (f.field === 9) raw = f.data;
    else if (f.field === 10) {
      for (let p = 0; p + 8 <= f.data.length; p += 8) doubles.push(f.data.readDoubleLE(p));
    } else if (f.field === 4) {
      for (let p = 0; p + 4 <= f.data.length; p += 4) floats.push(f.data.readFloatLE(p));
    }
  }
  let data: Float64Array;
  if (raw) {
    const n = dataType === DT_DOUBLE ? raw.length / 8 : raw.length / 4;
    data = new Float64Array(n);
    for (let i = 0; i < n; i++)
      data[i] = dataType === DT_DOUBLE ? raw.readDoubleLE(i * 8) : raw.readFloatLE(i * 4);
  } else {
    data = Float64Array.from(dataType === DT_DOUBLE ? doubles : floats);
  }
  return { name, dims, data };
}

function parseValueInfo(buf: Buffer): { name: string; dims: number[]; elemType: number } {
  let name = "";
  let dims: number[] = [];
  let elemType = DT_DOUBLE;
  for (const f of decodeFields(buf)) {
    if (f.field === 1) name = f.data.toString("utf8");
    else if (f.field === 2) {
      for (const t of decodeFields(f.data)) {
        if (t.field !== 1) continue; // tensor_type
        for (const tt of decodeFields(t.data)) {
          if (tt.field === 1) elemType = Number(tt.value);
          else if (tt.field === 2) {
            dims = [];
            for (const d of decodeFields(tt.data)) {
              if (d.field !== 1) continue;
              for (const dd of decodeFields(d.data))
                if (dd.field === 1) dims.push(signedFromVarint(dd.value));
            }
          }
        }
      }
    }
  }
  return { name, dims, elemType };
}

export function parseOnnx(bytes: Buffer): OnnxGraph {
  let graphBuf: Buffer | null = null;
  for (const f of decodeFields(bytes)) {
    if (f.field === 7) graphBuf = f.data;
  }
  if (!graphBuf) throw new Error("model has no graph");
  const graph: OnnxGraph = {
    nodes: [],
    initializers: new Map(),
    inputName: "",
    inputDims: [],
    outputName: "",
    elemType: DT_DOUBLE,
  };
  for (const f of decodeFields(graphBuf)) {
    if (f.field === 1) {
      const n: OnnxNode = { opType: "", name: "", inputs: [], outputs: [], attrs: new Map() };
      for (const nf of decodeFields(f.data)) {
        if (nf.field === 1) n.inputs.push(nf.data.toString("utf8"));
        else if (nf.field === 2) n.outputs.push(nf.data.toString("utf8"));
        else if (nf.field === 3) n.name = nf.data.toString("utf8");
        else if (nf.field === 4) n.opType = nf.data.toString("utf8");
        else if (nf.field === 5) {
          const a = parseAttr(nf.data);
          n.attrs.set(a.name, a);
        }
      }
      graph.nodes.push(n);
    } else if (f.field === 5) {
      const t = parseTensor(f.data);
      graph.initializers.set(t.name, t);
    } else if (f.field === 11) {
      const vi = parseValueInfo(f.data);
      if (!graph.initializers.has(vi.name)) {
        graph.inputName = vi.name;
        graph.inputDims = vi.dims;
        graph.elemType = vi.elemType;
      }
    } else if (f.field === 12) {
      graph.outputName = parseValueInfo(f.data).name;
    }
  }
  if (!graph.inputName || !graph.outputName) throw new Error("graph is missing input or output");
  return graph;
}
