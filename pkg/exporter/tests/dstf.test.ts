import { describe, expect, it } from 'vitest'
import { decodeDstf, encodeDstf, DstfLevel } from '../src/dstf'

function level(values: number[], c: number, h: number, w: number, den = 1): DstfLevel {
  return {
    channels: c,
    height: h,
    width: w,
    scaleNum: 1,
    scaleDen: den,
    data: Float32Array.from(values),
  }
}

describe('DSTF encoding', () => {
  it('writes the documented header layout', () => {
    const buf = encodeDstf([level([1.5, -2, 3, 0.25], 1, 2, 2)])
    expect(buf.toString('ascii', 0, 4)).toBe('DSTF')
    expect(buf.readUInt32LE(4)).toBe(1) // version
    expect(buf.readUInt32LE(8)).toBe(1) // level count
    expect(buf.readUInt32LE(12)).toBe(1) // C
    expect(buf.readUInt32LE(16)).toBe(2) // H
    expect(buf.readUInt32LE(20)).toBe(2) // W
    expect(buf.readUInt32LE(24)).toBe(1) // scale num
    expect(buf.readUInt32LE(28)).toBe(1) // scale den
    expect(buf.readFloatLE(32)).toBe(1.5)
    expect(buf.readFloatLE(36)).toBe(-2)
    expect(buf.length).toBe(12 + 20 + 16)
  })

  it('round-trips multiple levels byte-exactly', () => {
    const levels = [
      level([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 3, 1, 2, 1),
      level([-1, 2, -3, 4], 1, 2, 2, 2),
    ]
    const buf = encodeDstf(levels)
    const back = decodeDstf(buf)
    expect(back).toHaveLength(2)
    expect(encodeDstf(back).equals(buf)).toBe(true)
    expect(back[1].scaleDen).toBe(2)
    expect(Array.from(back[0].data)).toEqual(
      Array.from(Float32Array.from([0.1, 0.2, 0.3, 0.4, 0.5, 0.6])),
    )
  })

  it('rejects payload size mismatches', () => {
    expect(() => encodeDstf([level([1, 2, 3], 1, 2, 2)])).toThrow(/header says 4/)
  })

  it('rejects bad magic and truncation', () => {
    const buf = encodeDstf([level([1, 2, 3, 4], 1, 2, 2)])
    const bad = Buffer.from(buf)
    bad.write('NOPE', 0, 'ascii')
    expect(() => decodeDstf(bad)).toThrow(/bad magic/)
    expect(() => decodeDstf(buf.subarray(0, buf.length - 4))).toThrow(/truncated/)
    expect(() => decodeDstf(Buffer.concat([buf, Buffer.alloc(2)]))).toThrow(/trailing/)
  })
})
