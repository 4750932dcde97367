from .codec import (
    MAX_SPIKES,
    BadVersion,
    LengthMismatch,
    PacketError,
    SpikeCountMismatch,
    pack_packets,
    packet_size,
    unpack_packet,
)
from .engine import (
    BrokerWorker,
    NodeMap,
    RankWorker,
    SimulationPlan,
    broker_route,
    exchange_step,
    run_workers,
)
from .queues import AxonalSpike, DelayError, DelayQueues, SynapticRing, enqueue_axonal
from .transport import LoopbackTransport, SocketTransport, StepSkew, TransportError, make_transport
