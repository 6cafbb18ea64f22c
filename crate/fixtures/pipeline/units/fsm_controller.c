/*
 * Mode controller for an actuator channel.
 *
 * Modes: OFF -> STANDBY -> ACTIVE, any mode -> FAULT on a debounced fault,
 * FAULT -> STANDBY only on an explicit reset with the fault cleared.
 * Requests are ignored while a fault is latched.
 *
 * Command path: demand -> gain schedule -> saturation -> rate limit -> saturation.
 */
#include <math.h>
#include <stdint.h>

#define FSM_MODE_OFF 0
#define FSM_MODE_STANDBY 1
#define FSM_MODE_ACTIVE 2
#define FSM_MODE_FAULT 3

#define CMD_LIMIT 25.0F
#define CMD_RATE_LIMIT 2.5F
#define FAULT_DEBOUNCE 3U
#define STANDBY_SETTLE 2U
#define GAIN_TABLE_SIZE 5

typedef struct {
  int32_t mode;
  uint32_t fault_ticks;
  uint32_t settle_ticks;
  uint8_t fault_latched;
} FsmState;

typedef struct {
  float breakpoints[GAIN_TABLE_SIZE];
  float gains[GAIN_TABLE_SIZE];
} GainTable;

static const GainTable gain_table = {
  { 0.0F, 5.0F, 10.0F, 20.0F, 40.0F },
  { 1.0F, 0.9F, 0.75F, 0.6F, 0.5F }
};

static FsmState fsm_state;
static float cmd_prev;

/* inputs */
int32_t req_mode;
float cmd_in;
float speed_in;
uint8_t fault_in;
uint8_t reset_in;

/* outputs */
int32_t fsm_mode;
float cmd_out;
uint8_t fault_flag;
uint8_t ready_flag;
uint32_t cycle_count;

static float saturate(float value, float lo, float hi)
{
  float y;
  if (value > hi) {
    y = hi;
  } else if (value < lo) {
    y = lo;
  } else {
    y = value;
  }
  return y;
}

static float rate_limit(float target, float previous, float step)
{
  float delta;
  delta = target - previous;
  if (delta > step) {
    delta = step;
  } else if (delta < -step) {
    delta = -step;
  }
  return previous + delta;
}

static float lookup_gain(float speed)
{
  int32_t i;
  float frac;
  float g;
  if (!(speed > gain_table.breakpoints[0])) {
    g = gain_table.gains[0];
  } else if (speed >= gain_table.breakpoints[GAIN_TABLE_SIZE - 1]) {
    g = gain_table.gains[GAIN_TABLE_SIZE - 1];
  } else {
    i = 0;
    while ((i < GAIN_TABLE_SIZE - 2) && (speed >= gain_table.breakpoints[i + 1])) {
      i++;
    }
    frac = (speed - gain_table.breakpoints[i]) /
      (gain_table.breakpoints[i + 1] - gain_table.breakpoints[i]);
    g = gain_table.gains[i] + frac * (gain_table.gains[i + 1] - gain_table.gains[i]);
  }
  return g;
}

static uint8_t debounce_fault(uint8_t raw)
{
  uint8_t tripped;
  if (raw != 0U) {
    if (fsm_state.fault_ticks < FAULT_DEBOUNCE) {
      fsm_state.fault_ticks++;
    }
  } else {
    fsm_state.fault_ticks = 0U;
  }
  tripped = (uint8_t)(fsm_state.fault_ticks >= FAULT_DEBOUNCE);
  return tripped;
}

static int32_t next_mode(int32_t current, int32_t requested, uint8_t tripped)
{
  int32_t next;
  next = current;
  if (tripped != 0U) {
    next = FSM_MODE_FAULT;
  } else {
    switch (current) {
     case FSM_MODE_OFF:
      if (requested != FSM_MODE_OFF) {
        next = FSM_MODE_STANDBY;
      }
      break;

     case FSM_MODE_STANDBY:
      if (requested == FSM_MODE_OFF) {
        next = FSM_MODE_OFF;
      } else if ((requested == FSM_MODE_ACTIVE) &&
                 (fsm_state.settle_ticks >= STANDBY_SETTLE)) {
        next = FSM_MODE_ACTIVE;
      }
      break;

     case FSM_MODE_ACTIVE:
      if (requested == FSM_MODE_OFF) {
        next = FSM_MODE_OFF;
      } else if (requested == FSM_MODE_STANDBY) {
        next = FSM_MODE_STANDBY;
      }
      break;

     case FSM_MODE_FAULT:
      if ((reset_in != 0U) && (fault_in == 0U)) {
        next = FSM_MODE_STANDBY;
      }
      break;

     default:
      next = FSM_MODE_FAULT;
      break;
    }
  }
  return next;
}

static void update_settle(int32_t previous, int32_t next)
{
  if (next != FSM_MODE_STANDBY) {
    fsm_state.settle_ticks = 0U;
  } else if (previous != FSM_MODE_STANDBY) {
    fsm_state.settle_ticks = 0U;
  } else if (fsm_state.settle_ticks < STANDBY_SETTLE) {
    fsm_state.settle_ticks++;
  }
}

static float mode_command(int32_t mode, float demand, float speed)
{
  float cmd;
  switch (mode) {
   case FSM_MODE_ACTIVE:
    cmd = demand * lookup_gain(speed);
    break;

   case FSM_MODE_STANDBY:
    cmd = 0.0F;
    break;

   default:
    cmd = 0.0F;
    break;
  }
  return cmd;
}

void FSM_initialize(void)
{
  fsm_state.mode = FSM_MODE_OFF;
  fsm_state.fault_ticks = 0U;
  fsm_state.settle_ticks = 0U;
  fsm_state.fault_latched = 0U;
  cmd_prev = 0.0F;
  req_mode = FSM_MODE_OFF;
  cmd_in = 0.0F;
  speed_in = 0.0F;
  fault_in = 0U;
  reset_in = 0U;
  fsm_mode = FSM_MODE_OFF;
  cmd_out = 0.0F;
  fault_flag = 0U;
  ready_flag = 0U;
  cycle_count = 0U;
}

void FSM_step(void)
{
  uint8_t tripped;
  int32_t previous;
  int32_t next;
  float demand;
  float raw_cmd;
  cycle_count++;
  tripped = debounce_fault(fault_in);
  previous = fsm_state.mode;
  next = next_mode(previous, req_mode, tripped);
  update_settle(previous, next);
  if (next == FSM_MODE_FAULT) {
    fsm_state.fault_latched = 1U;
  } else if (previous == FSM_MODE_FAULT) {
    fsm_state.fault_latched = 0U;
  }
  fsm_state.mode = next;
  demand = cmd_in;
  if (isnan(demand)) {
    demand = 0.0F;
  }
  raw_cmd = mode_command(next, demand, speed_in);
  raw_cmd = saturate(raw_cmd, -CMD_LIMIT, CMD_LIMIT);
  cmd_out = saturate(rate_limit(raw_cmd, cmd_prev, CMD_RATE_LIMIT), -CMD_LIMIT, CMD_LIMIT);
  cmd_prev = cmd_out;
  fsm_mode = fsm_state.mode;
  fault_flag = fsm_state.fault_latched;
  ready_flag = (uint8_t)((fsm_state.mode == FSM_MODE_STANDBY) &&
                         (fsm_state.settle_ticks >= STANDBY_SETTLE));
}

void FSM_terminate(void)
{
  fsm_state.mode = FSM_MODE_OFF;
  fsm_mode = FSM_MODE_OFF;
  cmd_out = 0.0F;
  cmd_prev = 0.0F;
  ready_flag = 0U;
}
