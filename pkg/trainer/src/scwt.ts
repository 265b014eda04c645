/**
 * Reader and writer for the codec's binary weight container.
 *
 * Layout: "SCWT" magic, u16 version, u32 config length, utf-8 config
 * text, u32 record count, then records sorted by name (u16 name length,
 * name bytes, u8 dtype, u8 rank, u32 extents, float32 LE payload),
 * ending with the first 8 bytes of a sha256 over the config text plus
 * every record's name, dtype, rank, extents and payload.
 */

import * as crypto from "node:crypto";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

const MAGIC = Buffer.from("SCWT", "ascii");
const VERSION = 1;
const DTYPE_F32 = 0;
const ID_BYTES = 8;

export interface ParamTensor {
  shape: number[];
  data: Float32Array;
}

export type ParamMap = Map<string, ParamTensor>;

function f32leBytes(data: Float32Array): Buffer {
  if (os.endianness() === "LE") {
    return Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  }
  const buf = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) {
    buf.writeFloatLE(data[i], i * 4);
  }
  return buf;
}

function checkTensor(name: string, tensor: ParamTensor): void {
  if (Buffer.byteLength(name, "utf-8") === 0 || Buffer.byteLength(name, "utf-8") > 0xffff) {
    throw new Error(`bad parameter name ${JSON.stringify(name)}`);
  }
  const { shape, data } = tensor;
  if (shape.length < 1 || shape.length > 4) {
    throw new Error(`${name}: rank must be 1..4, got ${shape.length}`);
  }
  let size = 1;
  for (const e of shape) {
    if (!Number.isInteger(e) || e <= 0) {
      throw new Error(`${name}: bad extent ${e}`);
    }
    size *= e;
  }
  if (data.length !== size) {
    throw new Error(`${name}: payload has ${data.length} values, shape needs ${size}`);
  }
}

function recordHeader(name: string, shape: number[]): Buffer {
  const nameBytes = Buffer.from(name, "utf-8");
  const head = Buffer.alloc(2 + nameBytes.length + 2 + 4 * shape.length);
  let off = head.writeUInt16LE(nameBytes.length, 0);
  off += nameBytes.copy(head, off);
  off = head.writeUInt8(DTYPE_F32, off);
  off = head.writeUInt8(shape.length, off);
  for (const e of shape) {
    off = head.writeUInt32LE(e, off);
  }
  return head;
}

function digestOf(configBytes: Buffer, names: string[], params: ParamMap): Buffer {
  const hash = crypto.createHash("sha256");
  hash.update(configBytes);
  for (const name of names) {
    const { shape, data } = params.get(name)!;
    const meta = Buffer.alloc(2 + 4 * shape.length);
    meta.writeUInt8(DTYPE_F32, 0);
    meta.writeUInt8(shape.length, 1);
    shape.forEach((e, i) => meta.writeUInt32LE(e, 2 + 4 * i));
    hash.update(Buffer.from(name, "utf-8"));
    hash.update(meta);
    hash.update(f32leBytes(data));
  }
  return hash.digest().subarray(0, ID_BYTES);
}

function sortedNames(params: ParamMap): string[] {
  return [...params.keys()].sort();
}

/** Identifier a reader will report for this store: digest of config plus payloads. */
export function modelId(params: ParamMap, configText: string): Buffer {
  for (const [name, tensor] of params) {
    checkTensor(name, tensor);
  }
  return digestOf(Buffer.from(configText, "utf-8"), sortedNames(params), params);
}

export function encodeStore(params: ParamMap, configText: string): Buffer {
  if (params.size === 0) {
    throw new Error("refusing to write an empty store");
  }
  for (const [name, tensor] of params) {
    checkTensor(name, tensor);
  }
  const configBytes = Buffer.from(configText, "utf-8");
  const names = sortedNames(params);

  const pieces: Buffer[] = [];
  const fixed = Buffer.alloc(4 + 2 + 4);
  MAGIC.copy(fixed, 0);
  fixed.writeUInt16LE(VERSION, 4);
  fixed.writeUInt32LE(configBytes.length, 6);
  pieces.push(fixed, configBytes);

  const count = Buffer.alloc(4);
  count.writeUInt32LE(names.length, 0);
  pieces.push(count);

  for (const name of names) {
    const tensor = params.get(name)!;
    pieces.push(recordHeader(name, tensor.shape), f32leBytes(tensor.data));
  }
  pieces.push(digestOf(configBytes, names, params));
  return Buffer.concat(pieces);
}

/** Write atomically: a finished temp file is renamed over the target. */
export function writeStore(filePath: string, params: ParamMap, configText: string): Buffer {
  const body = encodeStore(params, configText);
  const dir = path.dirname(filePath);
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.${path.basename(filePath)}.${process.pid}.tmp`);
  fs.writeFileSync(tmp, body);
  fs.renameSync(tmp, filePath);
  return body.subarray(body.length - ID_BYTES);
}

export interface StoreContents {
  params: ParamMap;
  configText: string;
  id: Buffer;
}

export function decodeStore(body: Buffer): StoreContents {
  let off = 0;
  const need = (n: number, what: string) => {
    if (off + n > body.length) {
      throw new Error(`truncated store: ran out of bytes reading ${what}`);
    }
  };

  need(4, "magic");
  if (!body.subarray(0, 4).equals(MAGIC)) {
    throw new Error("not a weight store: bad magic");
  }
  off = 4;
  need(2, "version");
  const version = body.readUInt16LE(off);
  off += 2;
  if (version !== VERSION) {
    throw new Error(`unsupported store version ${version}`);
  }
  need(4, "config length");
  const configLen = body.readUInt32LE(off);
  off += 4;
  need(configLen, "config text");
  const configText = body.subarray(off, off + configLen).toString("utf-8");
  off += configLen;
  need(4, "record count");
  const count = body.readUInt32LE(off);
  off += 4;

  const params: ParamMap = new Map();
  let prevName: string | null = null;
  for (let r = 0; r < count; r++) {
    need(2, "name length");
    const nameLen = body.readUInt16LE(off);
    off += 2;
    need(nameLen, "name");
    const name = body.subarray(off, off + nameLen).toString("utf-8");
    off += nameLen;
    if (prevName !== null && !(prevName < name)) {
      throw new Error(`records out of order at ${JSON.stringify(name)}`);
    }
    prevName = name;
    need(2, "dtype and rank");
    const dtype = body.readUInt8(off);
    const rank = body.readUInt8(off + 1);
    off += 2;
    if (dtype !== DTYPE_F32) {
      throw new Error(`${name}: unsupported dtype ${dtype}`);
    }
    if (rank < 1 || rank > 4) {
      throw new Error(`${name}: bad rank ${rank}`);
    }
    const shape: number[] = [];
    let size = 1;
    for (let d = 0; d < rank; d++) {
      need(4, "extent");
      const e = body.readUInt32LE(off);
      off += 4;
      if (e === 0) {
        throw new Error(`${name}: zero extent`);
      }
      shape.push(e);
      size *= e;
    }
    need(size * 4, `payload of ${name}`);
    const data = new Float32Array(size);
    for (let i = 0; i < size; i++) {
      data[i] = body.readFloatLE(off + i * 4);
    }
    off += size * 4;
    params.set(name, { shape, data });
  }

  need(ID_BYTES, "digest");
  const stored = body.subarray(off, off + ID_BYTES);
  off += ID_BYTES;
  if (off !== body.length) {
    throw new Error(`trailing bytes after digest: ${body.length - off}`);
  }
  const expect = digestOf(Buffer.from(configText, "utf-8"), [...params.keys()], params);
  if (!stored.equals(expect)) {
    throw new Error("store digest mismatch: file is corrupt or was edited");
  }
  return { params, configText, id: Buffer.from(stored) };
}

export function readStore(filePath: string): StoreContents {
  return decodeStore(fs.readFileSync(filePath));
}
