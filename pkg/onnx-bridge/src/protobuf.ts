/**
 * Minimal protobuf wire-format support: just enough to write and read the
 * ONNX subset this bridge emits. Wire types: 0 varint, 1 fixed64,
 * 2 length-delimited, 5 fixed32.
 */

export class Writer {
  private chunks: Buffer[] = [];

  varint(n: number | bigint): this {
    let v = BigInt(n);
    if (v < 0n) v += 1n << 64n; // two's complement for negative int64
    const bytes: number[] = [];
    do {
      let b = Number(v & 0x7fn);
      v >>= 7n;
      if (v !== 0n) b |= 0x80;
      bytes.push(b);
    } while (v !== 0n);
    this.chunks.push(Buffer.from(bytes));
    return this;
  }

  tag(field: number, wire: number): this {
    return this.varint((field << 3) | wire);
  }

  int(field: number, value: number | bigint): this {
    return this.tag(field, 0).varint(value);
  }

  string(field: number, value: string): this {
    const b = Buffer.from(value, "utf8");
    this.tag(field, 2).varint(b.length);
    this.chunks.push(b);
    return this;
  }

  bytes(field: number, value: Buffer): this {
    this.tag(field, 2).varint(value.length);
    this.chunks.push(value);
    return this;
  }

  float(field: number, value: number): this {
    const b = Buffer.alloc(4);
    b.writeFloatLE(value, 0);
    this.tag(field, 5);
    this.chunks.push(b);
    return this;
  }

  packedInts(field: number, values: number[]): this {
    const w = new Writer();
    for (const v of values) w.varint(v);
    return this.bytes(field, w.finish());
  }

  message(field: number, body: Writer): this {
    return this.bytes(field, body.finish());
  }

  finish(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

export interface Field {
  field: number;
  wire: number;
  value: bigint;   // wire 0/1/5
  data: Buffer;    // wire 2
}

export function readVarint(buf: Buffer, pos: number): [bigint, number] {
  let result = 0n;
  let shift = 0n;
  for (;;) {
    if (pos >= buf.length) throw new Error("truncated varint");
    const b = buf[pos++];
    result |= BigInt(b & 0x7f) << shift;
    if ((b & 0x80) === 0) return [result, pos];
    shift += 7n;
    if (shift > 70n) throw new Error("varint too long");
  }
}

/** Decode one message level into its raw fields (repeated fields repeat). */
export function decodeFields(buf: Buffer): Field[] {
  const out: Field[] = [];
  let pos = 0;
  while (pos < buf.length) {
    let key: bigint;
    [key, pos] = readVarint(buf, pos);
    const field = Number(key >> 3n);
    const wire = Number(key & 7n);
    if (wire === 0) {
      let v: bigint;
      [v, pos] = readVarint(buf, pos);
      out.push({ field, wire, value: v, data: Buffer.alloc(0) });
    } else if (wire === 1) {
      if (pos + 8 > buf.length) throw new Error("truncated fixed64");
      out.push({ field, wire, value: buf.readBigUInt64LE(pos), data: buf.subarray(pos, pos + 8) });
      pos += 8;
    } else if (wire === 5) {
      if (pos + 4 > buf.length) throw new Error("truncated fixed32");
      out.push({ field, wire, value: BigInt(buf.readUInt32LE(pos)), data: buf.subarray(pos, pos + 4) });
      pos += 4;
    } else if (wire === 2) {
      let len: bigint;
      [len, pos] = readVarint(buf, pos);
      const end = pos + Number(len);
      if (end > buf.length) throw new Error("truncated length-delimited field");
      out.push({ field, wire, value: len, data: buf.subarray(pos, end) });
      pos = end;
    } else {
      throw new Error(`unsupported wire type ${wire}`);
    }
  }
  return out;
}

export function decodePackedInts(data: Buffer): number[] {
  const out: number[] = [];
  let pos = 0;
  while (pos < data.length) {
    let v: bigint;
    [v, pos] = readVarint(data, pos);
    out.push(Number(v));
  }
  return out;
}

export function signedFromVarint(v: bigint): number {
  // interpret as two's-complement int64
  if (v >= 1n << 63n) v -= 1n << 64n;
  return Number(v);
}
