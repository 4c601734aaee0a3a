/**
 * Reference executor for the ONNX subset the bridge writes. Tensors carry an
 * explicit shape with batch dimension 1; execution walks the node list in
 * graph order (the exported graphs are chains, so that is topological).
 */

import { OnnxGraph, OnnxNode } from "./onnx";
import { avgpool2d, conv2d } from "./sbnet";

interface Val {
  dims: number[];
  data: Float64Array;
}

function getAttrInts(n: OnnxNode, name: string, fallback?: number[]): number[] {
  const a = n.attrs.get(name);
  if (a?.ints) return a.ints;
  if (fallback) return fallback;
  throw new Error(`node ${n.name}: missing attribute ${name}`);
}

function getAttrInt(n: OnnxNode, name: string, fallback: number): number {
  return n.attrs.get(name)?.i ?? fallback;
}

export function runOnnx(graph: OnnxGraph, input: Float64Array): Float64Array {
  const values = new Map<string, Val>();
  const inDims = graph.inputDims;
  const flatIn = inDims.reduce((a, b) => a * b, 1);
  if (input.length !== flatIn)
    throw new Error(`input has ${input.length} values, graph expects ${flatIn}`);
  values.set(graph.inputName, { dims: [...inDims], data: Float64Array.from(input) });
  for (const [name, t] of graph.initializers) {
    values.set(name, { dims: t.dims, data: t.data });
  }

  for (const n of graph.nodes) {
    const ins = n.inputs.map((name) => {
      const v = values.get(name);
      if (!v) throw new Error(`node ${n.name}: missing input ${name}`);
      return v;
    });
    let out: Val;
    switch (n.opType) {
      case "Conv": {
        const [x, w, b] = ins;
        const [, cin, h, wd] = x.dims;
        const [filters, , kh, kw] = w.dims;
        const strides = getAttrInts(n, "strides", [1, 1]);
        const pads = getAttrInts(n, "pads", [0, 0, 0, 0]);
        if (strides[0] !== strides[1] || new Set(pads).size !== 1)
          throw new Error(`node ${n.name}: anisotropic conv unsupported`);
        const data = conv2d(x.data, cin, h, wd, w.data, filters, kh, kw,
          strides[0], pads[0], b?.data);
        const ho = Math.floor((h + 2 * pads[0] - kh) / strides[0]) + 1;
        const wo = Math.floor((wd + 2 * pads[0] - kw) / strides[0]) + 1;
        out = { dims: [1, filters, ho, wo], data };
        break;
      }
      case "AveragePool": {
        const [x] = ins;
        const [, c, h, wd] = x.dims;
        const kernel = getAttrInts(n, "kernel_shape");
        const strides = getAttrInts(n, "strides", kernel);
        const data = avgpool2d(x.data, c, h, wd, kernel[0], kernel[1], strides[0]);
        const ho = Math.floor((h - kernel[0]) / strides[0]) + 1;
        const wo = Math.floor((wd - kernel[1]) / strides[1]) + 1;
        out = { dims: [1, c, ho, wo], data };
        break;
      }
      case "Flatten": {
        const [x] = ins;
        out = { dims: [1, x.data.length], data: x.data };
        break;
      }
      case "Gemm": {
        const [x, w, b] = ins;
        if (getAttrInt(n, "transB", 0) !== 1)
          throw new Error(`node ${n.name}: only transB=1 Gemm supported`);
        const [outW, fanIn] = w.dims;
        if (x.data.length !== fanIn)
          throw new Error(`node ${n.name}: Gemm input ${x.data.length} != ${fanIn}`);
        const data = new Float64Array(outW);
        for (let o = 0; o < outW; o++) {
          let acc = b ? b.data[o] : 0;
          for (let j = 0; j < fanIn; j++) acc += w.data[o * fanIn + j] * x.data[j];
          data[o] = acc;
        }
        out = { dims: [1, outW], data };
        break;
      }
      case "Relu": {
        out = { dims: ins[0].dims, data: ins[0].data.map((v) => (v > 0 ? v : 0)) };
        break;
      }
      case "Tanh": {
        out = { dims: ins[0].dims, data: ins[0].data.map(Math.tanh) };
        break;
      }
      case "Sigmoid": {
        out = {
          dims: ins[0].dims,
          data: ins[0].data.map((v) =>
            v >= 0 ? 1 / (1 + Math.exp(-v)) : Math.exp(v) / (1 + Math.exp(v))),
        };
        break;
      }
      default:
        throw new Error(`unsupported op ${n.opType}`);
    }
    values.set(n.outputs[0], out);
  }
  const result = values.get(graph.outputName);
  if (!result) throw new Error(`graph never produced output ${graph.outputName}`);
  return result.data;
}
