/**
 * DSTF binary format: "DSTF" magic, u32 version (= 1), u32 level count, then
 * per level a header (C, H, W, scaleNum, scaleDen as u32) followed by
 * C*H*W float32 values in channel-major order. All integers and floats are
 * little-endian.
 */

export interface DstfLevel {
  channels: number
  height: number
  width: number
  /** sourceCoord * scaleNum / scaleDen = levelCoord */
  scaleNum: number
  scaleDen: number
  /** channel-major (C, H, W) */
  data: Float32Array
}

export const DSTF_MAGIC = 'DSTF'
export const DSTF_VERSION = 1

export function encodeDstf(levels: DstfLevel[]): Buffer {
  let payload = 0
  for (const level of levels) {
    const n = level.channels * level.height * level.width
    if (level.data.length !== n) {
      throw new Error(
        `level payload has ${level.data.length} values, header says ${n}`,
      )
    }
    payload += 20 + 4 * n
  }
  const buf = Buffer.alloc(12 + payload)
  buf.write(DSTF_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(DSTF_VERSION, 4)
  buf.writeUInt32LE(levels.length, 8)
  let offset = 12
  for (const level of levels) {
    buf.writeUInt32LE(level.channels, offset)
    buf.writeUInt32LE(level.height, offset + 4)
    buf.writeUInt32LE(level.width, offset + 8)
    buf.writeUInt32LE(level.scaleNum, offset + 12)
    buf.writeUInt32LE(level.scaleDen, offset + 16)
    offset += 20
    for (const value of level.data) {
      buf.writeFloatLE(value, offset)
      offset += 4
    }
  }
  return buf
}

export function decodeDstf(buf: Buffer): DstfLevel[] {
  if (buf.length < 12) {
    throw new Error(`truncated DSTF: ${buf.length} bytes, header needs 12`)
  }
  if (buf.toString('ascii', 0, 4) !== DSTF_MAGIC) {
    throw new Error(`bad magic at offset 0: ${buf.subarray(0, 4).toString('hex')}`)
  }
  const version = buf.readUInt32LE(4)
  if (version !== DSTF_VERSION) {
    throw new Error(`unsupported DSTF version ${version}`)
  }
  const count = buf.readUInt32LE(8)
  const levels: DstfLevel[] = []
  let offset = 12
  for (let i = 0; i < count; i++) {
    if (offset + 20 > buf.length) {
      throw new Error(`truncated DSTF: level ${i} header at offset ${offset}`)
    }
    const channels = buf.readUInt32LE(offset)
    const height = buf.readUInt32LE(offset + 4)
    const width = buf.readUInt32LE(offset + 8)
    const scaleNum = buf.readUInt32LE(offset + 12)
    const scaleDen = buf.readUInt32LE(offset + 16)
    offset += 20
    const n = channels * height * width
    if (offset + 4 * n > buf.length) {
      throw new Error(`truncated DSTF: level ${i} payload at offset ${offset}`)
    }
    const data = new Float32Array(n)
    for (let j = 0; j < n; j++) {
      data[j] = buf.readFloatLE(offset)
      offset += 4
    }
    levels.push({ channels, height, width, scaleNum, scaleDen, data })
  }
  if (offset !== buf.length) {
    throw new Error(`${buf.length - offset} trailing bytes at offset ${offset}`)
  }
  return levels
}
