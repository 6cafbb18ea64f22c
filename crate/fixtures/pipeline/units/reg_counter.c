/* Exceedance counter for a regulator input channel. */
#include <stdint.h>

typedef struct {
  float threshold;
  uint32_t limit;
  uint32_t alarm_count;
} RegParams;

static const RegParams reg_params = { 50.0F, 1000000U, 3U };

/* inputs */
float reg_in;

/* reserved for the rate monitor */

/* outputs */
uint32_t reg_count;
uint8_t reg_alarm;

void REG_initialize(void)
{
  reg_in = 0.0F;
  reg_count = 0U;
  reg_alarm = 0U;
}

void REG_step(void)
{
  uint32_t next;
  if (reg_in > reg_params.threshold) {
    next = reg_count + 1U;
  } else {
    next = reg_count;
  }
  if (next > reg_params.limit) {
    next = reg_params.limit;
  }
  reg_count = next;
  reg_alarm = (uint8_t)(reg_count >= reg_params.alarm_count);
}
