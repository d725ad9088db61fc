import { endianness } from 'node:os'
import { readFileSync, statSync, writeFileSync } from 'node:fs'
import * as path from 'node:path'
import { MalformedFeatureFile } from './errors.js'

export const MAGIC = 'D3FF'
export const FORMAT_VERSION = 1
export const DTYPE_FLOAT32_LE = 0
export const HEADER_BYTES = 24

export type FeatureKind = 'diffusion' | 'dino' | 'fused' | 'synthetic' | 'position'

export interface FeatureMapFile {
  viewId: number
  kind: FeatureKind
  height: number
  width: number
  channels: number
  /** Row-major, channel-last: element (h, w, c) at index (h * width + w) * channels + c. */
  data: Float32Array
  /** Denoising step index; present only on diffusion maps. */
  timestep?: number | null
  camera?: Record<string, number> | null
}

export function sidecarPath(file: string): string {
  const parsed = path.parse(file)
  return path.join(parsed.dir, parsed.name + '.json')
}

function float32ToLeBuffer(data: Float32Array): Buffer {
  if (endianness() === 'LE') {
    return Buffer.from(data.buffer, data.byteOffset, data.byteLength)
  }
  const buf = Buffer.alloc(data.length * 4)
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength)
  for (let i = 0; i < data.length; i++) view.setFloat32(i * 4, data[i], true)
  return buf
}

function leBufferToFloat32(buf: Buffer, count: number): Float32Array {
  if (endianness() === 'LE') {
    // copy so the result does not alias node's internal pool
    return new Float32Array(buf.buffer.slice(buf.byteOffset, buf.byteOffset + count * 4))
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength)
  const out = new Float32Array(count)
  for (let i = 0; i < count; i++) out[i] = view.getFloat32(i * 4, true)
  return out
}

function packHeader(height: number, width: number, channels: number): Buffer {
  const head = Buffer.alloc(HEADER_BYTES)
  head.write(MAGIC, 0, 'ascii')
  head.writeUInt32LE(FORMAT_VERSION, 4)
  head.writeUInt32LE(height, 8)
  head.writeUInt32LE(width, 12)
  head.writeUInt32LE(channels, 16)
  head.writeUInt32LE(DTYPE_FLOAT32_LE, 20)
  return head
}

export interface FeatureHeader {
  height: number
  width: number
  channels: number
}

/** Validate the 24-byte header and payload length; return the dimensions. */
export function readFeatureHeader(file: string): FeatureHeader {
  const size = statSync(file).size
  if (size < HEADER_BYTES) {
    throw new MalformedFeatureFile(`${file}: file shorter than the ${HEADER_BYTES}-byte header`)
  }
  const head = readFileSync(file).subarray(0, HEADER_BYTES)
  if (head.toString('ascii', 0, 4) !== MAGIC) {
    throw new MalformedFeatureFile(`${file}: bad magic`)
  }
  const version = head.readUInt32LE(4)
  if (version !== FORMAT_VERSION) {
    throw new MalformedFeatureFile(`${file}: version ${version} unsupported (expected ${FORMAT_VERSION})`)
  }
  const height = head.readUInt32LE(8)
  const width = head.readUInt32LE(12)
  const channels = head.readUInt32LE(16)
  const dtype = head.readUInt32LE(20)
  if (dtype !== DTYPE_FLOAT32_LE) {
    throw new MalformedFeatureFile(`${file}: unknown dtype code ${dtype}`)
  }
  const expected = HEADER_BYTES + height * width * channels * 4
  if (size !== expected) {
    throw new MalformedFeatureFile(
      `${file}: header claims ${height}x${width}x${channels} float32 (${expected} bytes), file has ${size}`,
    )
  }
  return { height, width, channels }
}

/** Write the binary container plus its JSON sidecar; round trip is byte exact. */
export function writeFeatureMap(fmap: FeatureMapFile, file: string): void {
  const { height, width, channels, data } = fmap
  if (data.length !== height * width * channels) {
    throw new MalformedFeatureFile(
      `${file}: data length ${data.length} != ${height}x${width}x${channels}`,
    )
  }
  writeFileSync(file, Buffer.concat([packHeader(height, width, channels), float32ToLeBuffer(data)]))
  // key order matches the python reader's own sidecar output (sorted)
  const sidecar = {
    C: channels,
    H: height,
    W: width,
    camera: fmap.camera ?? null,
    kind: fmap.kind,
    timestep: fmap.timestep ?? null,
    view_id: fmap.viewId,
  }
  writeFileSync(sidecarPath(file), JSON.stringify(sidecar) + '\n')
}

/** Read and validate one feature map; requires the JSON sidecar. */
export function readFeatureMap(file: string): FeatureMapFile {
  const { height, width, channels } = readFeatureHeader(file)
  const side = sidecarPath(file)
  let meta: Record<string, unknown>
  try {
    meta = JSON.parse(readFileSync(side, 'ascii'))
  } catch (err) {
    throw new MalformedFeatureFile(`cannot parse sidecar ${side}: ${err}`)
  }
  const payload = readFileSync(file).subarray(HEADER_BYTES)
  return {
    viewId: Number(meta.view_id ?? 0),
    kind: String(meta.kind ?? 'fused') as FeatureKind,
    height,
    width,
    channels,
    data: leBufferToFloat32(payload, height * width * channels),
    timestep: meta.timestep === null || meta.timestep === undefined ? null : Number(meta.timestep),
    camera: (meta.camera as Record<string, number> | null) ?? null,
  }
}
