#pragma once

// Register offsets and bit definitions for the 82599 family, restricted to the
// subset this driver uses. Shared by the driver and the emulated device, so it
// is the single source of truth for both sides of the protocol.

#include <cstddef>
#include <cstdint>

namespace uddk::ixgbe {

inline constexpr std::uint16_t kVendorIntel = 0x8086;
inline constexpr std::uint16_t kDeviceIds[] = {0x10FB, 0x10F7, 0x10F9, 0x10FC, 0x1514, 0x1517,
                                               0x151C, 0x1528, 0x154D, 0x1557, 0x1558};

inline constexpr std::size_t kBar0Size = 512 * 1024;
inline constexpr std::uint16_t kMaxQueues = 64;

namespace reg {
inline constexpr std::size_t CTRL = 0x00000;
inline constexpr std::size_t STATUS = 0x00008;
inline constexpr std::size_t CTRL_EXT = 0x00018;
inline constexpr std::size_t EIMC = 0x00888;
inline constexpr std::size_t RDRXCTL = 0x02F00;
inline constexpr std::size_t RXCTRL = 0x03000;
inline constexpr std::size_t RXPBSIZE0 = 0x03C00;
inline constexpr std::size_t GPRC = 0x04074;
inline constexpr std::size_t GPTC = 0x04080;
inline constexpr std::size_t GORCL = 0x04088;
inline constexpr std::size_t GORCH = 0x0408C;
inline constexpr std::size_t GOTCL = 0x04090;
inline constexpr std::size_t GOTCH = 0x04094;
inline constexpr std::size_t HLREG0 = 0x04240;
inline constexpr std::size_t AUTOC = 0x042A0;
inline constexpr std::size_t LINKS = 0x042A4;
inline constexpr std::size_t RTTDCS = 0x04900;
inline constexpr std::size_t DMATXCTL = 0x04A80;
inline constexpr std::size_t FCTRL = 0x05080;
inline constexpr std::size_t DTXMXSZRQ = 0x08100;
inline constexpr std::size_t RAL0 = 0x0A200;
inline constexpr std::size_t RAH0 = 0x0A204;
inline constexpr std::size_t TXPBSIZE0 = 0x0CC00;
inline constexpr std::size_t EEC = 0x10010;

// Per-queue receive registers (queues 0-63).
constexpr std::size_t RDBAL(unsigned q) { return 0x01000 + 0x40 * q; }
constexpr std::size_t RDBAH(unsigned q) { return 0x01004 + 0x40 * q; }
constexpr std::size_t RDLEN(unsigned q) { return 0x01008 + 0x40 * q; }
constexpr std::size_t DCA_RXCTRL(unsigned q) { return 0x0100C + 0x40 * q; }
constexpr std::size_t RDH(unsigned q) { return 0x01010 + 0x40 * q; }
constexpr std::size_t SRRCTL(unsigned q) { return 0x01014 + 0x40 * q; }
constexpr std::size_t RDT(unsigned q) { return 0x01018 + 0x40 * q; }
constexpr std::size_t RXDCTL(unsigned q) { return 0x01028 + 0x40 * q; }

// Per-queue transmit registers (queues 0-63).
constexpr std::size_t TDBAL(unsigned q) { return 0x06000 + 0x40 * q; }
constexpr std::size_t TDBAH(unsigned q) { return 0x06004 + 0x40 * q; }
constexpr std::size_t TDLEN(unsigned q) { return 0x06008 + 0x40 * q; }
constexpr std::size_t TDH(unsigned q) { return 0x06010 + 0x40 * q; }
constexpr std::size_t TDT(unsigned q) { return 0x06018 + 0x40 * q; }
constexpr std::size_t TXDCTL(unsigned q) { return 0x06028 + 0x40 * q; }
} // namespace reg

namespace bits {
inline constexpr std::uint32_t CTRL_LNK_RST = 1u << 3;
inline constexpr std::uint32_t CTRL_RST = 1u << 26;
inline constexpr std::uint32_t CTRL_RST_MASK = CTRL_LNK_RST | CTRL_RST;
inline constexpr std::uint32_t CTRL_EXT_NS_DIS = 1u << 16;
inline constexpr std::uint32_t EIMC_ALL = 0x7FFFFFFF;
inline constexpr std::uint32_t EEC_ARD = 1u << 9;
inline constexpr std::uint32_t RDRXCTL_CRCSTRIP = 1u << 1;
inline constexpr std::uint32_t RDRXCTL_DMAIDONE = 1u << 3;
inline constexpr std::uint32_t RXCTRL_RXEN = 1u << 0;
inline constexpr std::uint32_t HLREG0_TXCRCEN = 1u << 0;
inline constexpr std::uint32_t HLREG0_RXCRCSTRP = 1u << 1;
inline constexpr std::uint32_t HLREG0_TXPADEN = 1u << 10;
inline constexpr std::uint32_t AUTOC_LMS_SHIFT = 13;
inline constexpr std::uint32_t AUTOC_LMS_MASK = 7u << AUTOC_LMS_SHIFT;
inline constexpr std::uint32_t AUTOC_LMS_10G_SERIAL = 3u << AUTOC_LMS_SHIFT;
inline constexpr std::uint32_t AUTOC_10G_PMA_PMD_MASK = 3u << 7;
inline constexpr std::uint32_t AUTOC_10G_XAUI = 0u << 7;
inline constexpr std::uint32_t AUTOC_AN_RESTART = 1u << 12;
inline constexpr std::uint32_t LINKS_UP = 1u << 30;
inline constexpr std::uint32_t LINKS_SPEED_MASK = 3u << 28;
inline constexpr std::uint32_t LINKS_SPEED_10G = 3u << 28;
inline constexpr std::uint32_t LINKS_SPEED_1G = 2u << 28;
inline constexpr std::uint32_t LINKS_SPEED_100M = 1u << 28;
inline constexpr std::uint32_t RTTDCS_ARBDIS = 1u << 6;
inline constexpr std::uint32_t DMATXCTL_TE = 1u << 0;
inline constexpr std::uint32_t FCTRL_MPE = 1u << 8;
inline constexpr std::uint32_t FCTRL_UPE = 1u << 9;
inline constexpr std::uint32_t FCTRL_BAM = 1u << 10;
inline constexpr std::uint32_t RAH_AV = 1u << 31;
inline constexpr std::uint32_t SRRCTL_DESCTYPE_MASK = 7u << 25;
inline constexpr std::uint32_t SRRCTL_DESCTYPE_ADV_ONEBUF = 1u << 25;
inline constexpr std::uint32_t SRRCTL_DROP_EN = 1u << 28;
inline constexpr std::uint32_t SRRCTL_BSIZEPKT_MASK = 0x1F;
inline constexpr std::uint32_t DCA_RXCTRL_RELAXED_ORDER_BIT12 = 1u << 12;
inline constexpr std::uint32_t RXDCTL_ENABLE = 1u << 25;
inline constexpr std::uint32_t TXDCTL_ENABLE = 1u << 25;
inline constexpr std::uint32_t RXPBSIZE_512KB = 0x00080000;
inline constexpr std::uint32_t TXPBSIZE_40KB = 0x0000A000;
inline constexpr std::uint32_t DTXMXSZRQ_MAX = 0xFFF;
} // namespace bits

/// Descriptor layouts (16 bytes, little endian).
namespace desc {
inline constexpr std::size_t kSize = 16;

// Receive: read form written by the driver.
inline constexpr std::size_t kRxBufAddr = 0;
inline constexpr std::size_t kRxHdrAddr = 8;
// Receive: writeback form written by the device.
inline constexpr std::size_t kRxStatus = 8;
inline constexpr std::size_t kRxLength = 12;
inline constexpr std::uint32_t RX_DD = 1u << 0;
inline constexpr std::uint32_t RX_EOP = 1u << 1;

// Transmit.
inline constexpr std::size_t kTxBufAddr = 0;
inline constexpr std::size_t kTxCmdLen = 8;
inline constexpr std::size_t kTxStatus = 12; // olinfo_status on the way in, DD on writeback
inline constexpr std::uint32_t TX_LEN_MASK = 0xFFFF;
inline constexpr std::uint32_t TX_DTYP_DATA = 3u << 20;
inline constexpr std::uint32_t TX_EOP = 1u << 24;
inline constexpr std::uint32_t TX_IFCS = 1u << 25;
inline constexpr std::uint32_t TX_RS = 1u << 27;
inline constexpr std::uint32_t TX_DEXT = 1u << 29;
inline constexpr std::uint32_t TX_PAYLEN_SHIFT = 14;
inline constexpr std::uint32_t TX_DD = 1u << 0;
} // namespace desc

} // namespace uddk::ixgbe
